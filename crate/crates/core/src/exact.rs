//! Exact partition function, log-likelihood, marginals and log-likelihood
//! gradient by enumeration.
//!
//! The hidden layer is always marginalized in closed form, so the sum runs over
//! the states of one layer only. [`log_partition`] enumerates whichever layer is
//! narrower: summing over visible states uses `F(x)`, summing over hidden states
//! uses the mirrored quantity on the transposed model. Both walks visit states
//! in Gray-code order and update the affine field of the other layer with one
//! column add or subtract per step.

use rayon::prelude::*;

use crate::datasets::Dataset;
use crate::error::{check_dim, RbmError, Result};
use crate::model::{sigmoid, softplus, BinaryState, LogSumExp, RbmParams};
use crate::training::GradientEstimate;

/// Default limit on the width of the enumerated layer.
pub const ENUMERATION_BOUND: usize = 24;

/// Gray-code walks restart with a freshly computed field every `CHUNK` states,
/// which bounds drift from incremental updates and fixes the reduction order.
const CHUNK_BITS: u32 = 12;

/// Exact evaluation of a model on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactEval {
    pub log_z: f64,
    /// `log P(x)` for every training state, in dataset order.
    pub log_px: Vec<(BinaryState, f64)>,
    pub sum_ll: f64,
    pub mean_ll: f64,
}

fn check_bound(params: &RbmParams, bound: usize) -> Result<()> {
    let width = params.n_visible().min(params.n_hidden());
    if width > bound {
        return Err(RbmError::Capability(format!(
            "enumeration over 2^{width} states exceeds the bound of 2^{bound}"
        )));
    }
    Ok(())
}

/// Visits the visible states with Gray-code indices in `[lo, hi)`, passing the
/// state, the hidden field `c + Wx` and `bᵀx` to `visit`.
fn gray_walk<F>(params: &RbmParams, lo: u64, hi: u64, mut visit: F)
where
    F: FnMut(BinaryState, &[f64], f64),
{
    let nv = params.n_visible();
    let nh = params.n_hidden();
    let mut field = vec![0.0; nh];
    let mut state = BinaryState::from_key(lo ^ (lo >> 1), nv);
    params.hidden_field(&state, &mut field);
    let mut bias: f64 = state.ones_iter().map(|i| params.b[i]).sum();
    visit(state, &field, bias);
    for k in lo + 1..hi {
        let bit = k.trailing_zeros() as usize;
        state = state.flipped(bit);
        let sign = if state.get(bit) { 1.0 } else { -1.0 };
        for (j, a) in field.iter_mut().enumerate() {
            *a += sign * params.weight(j, bit);
        }
        bias += sign * params.b[bit];
        visit(state, &field, bias);
    }
}

fn chunks(n_units: usize) -> Vec<(u64, u64)> {
    let total = 1u64 << n_units;
    let step = 1u64 << CHUNK_BITS.min(n_units as u32);
    (0..total / step).map(|c| (c * step, (c + 1) * step)).collect()
}

/// `log Z` by summing `F(x)` over all visible states (Gray-code order).
pub fn log_partition_visible(params: &RbmParams) -> Result<f64> {
    if params.n_visible() > ENUMERATION_BOUND {
        return Err(RbmError::Capability(format!(
            "2^{} visible states exceed the enumeration bound",
            params.n_visible()
        )));
    }
    Ok(visible_side_log_z(params))
}

fn visible_side_log_z(params: &RbmParams) -> f64 {
    chunks(params.n_visible())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = LogSumExp::default();
            gray_walk(params, lo, hi, |_, field, bias| {
                acc.push(bias + field.iter().map(|&a| softplus(a)).sum::<f64>());
            });
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(LogSumExp::default(), LogSumExp::merge)
        .value()
}

/// `log Z` by summing the hidden-state marginal over all hidden states.
pub fn log_partition_hidden(params: &RbmParams) -> Result<f64> {
    log_partition_visible(&params.transposed())
}

/// `log Z`, enumerating the narrower layer.
pub fn log_partition(params: &RbmParams) -> Result<f64> {
    log_partition_with_bound(params, ENUMERATION_BOUND)
}

pub fn log_partition_with_bound(params: &RbmParams, bound: usize) -> Result<f64> {
    check_bound(params, bound)?;
    if params.n_hidden() < params.n_visible() {
        Ok(visible_side_log_z(&params.transposed()))
    } else {
        Ok(visible_side_log_z(params))
    }
}

/// `log P(x) = F(x) - log Z` for every training state, plus sum and mean.
pub fn exact_eval(params: &RbmParams, dataset: &Dataset) -> Result<ExactEval> {
    check_dim(params.n_visible(), dataset.n_visible())?;
    let log_z = log_partition(params)?;
    let mut scratch = vec![0.0; params.n_hidden()];
    let log_px: Vec<(BinaryState, f64)> = dataset
        .states()
        .iter()
        .map(|x| (*x, params.free_energy_unchecked(x, &mut scratch) - log_z))
        .collect();
    let sum_ll: f64 = log_px.iter().map(|(_, l)| l).sum();
    Ok(ExactEval { log_z, sum_ll, mean_ll: sum_ll / log_px.len() as f64, log_px })
}

/// `Σ_i log P(x^(i))` over the training set.
pub fn log_likelihood(params: &RbmParams, dataset: &Dataset) -> Result<f64> {
    Ok(exact_eval(params, dataset)?.sum_ll)
}

/// `log P(x)` for every visible state, indexed by packed key.
pub fn log_marginals(params: &RbmParams) -> Result<Vec<f64>> {
    if params.n_visible() > ENUMERATION_BOUND {
        return Err(RbmError::Capability(format!(
            "2^{} visible states exceed the enumeration bound",
            params.n_visible()
        )));
    }
    let log_z = log_partition(params)?;
    let mut out = vec![0.0; 1usize << params.n_visible()];
    gray_walk(params, 0, 1u64 << params.n_visible(), |x, field, bias| {
        out[x.key() as usize] = bias + field.iter().map(|&a| softplus(a)).sum::<f64>() - log_z;
    });
    Ok(out)
}

/// Model expectations `(E[h xᵀ], E[x], E[h])` computed by summing over the
/// visible states of `params` with the hidden layer marginalized.
fn visible_side_moments(params: &RbmParams, log_z: f64) -> GradientEstimate {
    let nv = params.n_visible();
    let nh = params.n_hidden();
    let partials: Vec<GradientEstimate> = chunks(nv)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut g = GradientEstimate::zeros(nv, nh);
            let mut probs = vec![0.0; nh];
            gray_walk(params, lo, hi, |x, field, bias| {
                let f = bias + field.iter().map(|&a| softplus(a)).sum::<f64>();
                let px = (f - log_z).exp();
                for (p, &a) in probs.iter_mut().zip(field) {
                    *p = px * sigmoid(a);
                }
                for i in x.ones_iter() {
                    g.db[i] += px;
                    for j in 0..nh {
                        g.dw[j * nv + i] += probs[j];
                    }
                }
                for (dc, p) in g.dc.iter_mut().zip(&probs) {
                    *dc += p;
                }
            });
            g
        })
        .collect();
    let mut total = GradientEstimate::zeros(nv, nh);
    for g in &partials {
        total.add_scaled(g, 1.0);
    }
    total
}

/// Model expectations `(E[h xᵀ], E[x], E[h])` under the exact joint.
pub fn model_moments(params: &RbmParams) -> Result<GradientEstimate> {
    check_bound(params, ENUMERATION_BOUND)?;
    let log_z = log_partition(params)?;
    if params.n_hidden() < params.n_visible() {
        let t = visible_side_moments(&params.transposed(), log_z);
        let (nv, nh) = (params.n_visible(), params.n_hidden());
        let mut g = GradientEstimate::zeros(nv, nh);
        for i in 0..nv {
            for j in 0..nh {
                g.dw[j * nv + i] = t.dw[i * nh + j];
            }
        }
        g.db = t.dc;
        g.dc = t.db;
        Ok(g)
    } else {
        Ok(visible_side_moments(params, log_z))
    }
}

/// Data expectations `(E[h|x] xᵀ, x, E[h|x])` averaged over `states`.
pub fn data_moments(params: &RbmParams, states: &[BinaryState]) -> GradientEstimate {
    let nv = params.n_visible();
    let nh = params.n_hidden();
    let mut g = GradientEstimate::zeros(nv, nh);
    let mut probs = vec![0.0; nh];
    for x in states {
        params.hidden_field(x, &mut probs);
        probs.iter_mut().for_each(|p| *p = sigmoid(*p));
        g.accumulate(x, &probs, 1.0);
    }
    g.scale(1.0 / states.len() as f64);
    g
}

/// Gradient of the mean log-likelihood: data moments minus model moments.
pub fn exact_gradient(params: &RbmParams, dataset: &Dataset) -> Result<GradientEstimate> {
    check_dim(params.n_visible(), dataset.n_visible())?;
    let mut g = data_moments(params, dataset.states());
    let model = model_moments(params)?;
    g.add_scaled(&model, -1.0);
    Ok(g)
}
