//! Contrastive-divergence gradient estimates and momentum SGD.

use std::fmt;

use crate::datasets::Dataset;
use crate::error::{check_dim, RbmError, Result};
use crate::metrics::{Monitor, TraceSeries};
use crate::model::{BinaryState, GibbsSampler, RbmParams, RngStream};

/// A gradient (or velocity) with the same shapes as [`RbmParams`]:
/// `dw` is n_hidden × n_visible row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    n_visible: usize,
    n_hidden: usize,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    pub dc: Vec<f64>,
}

impl GradientEstimate {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            n_visible,
            n_hidden,
            dw: vec![0.0; n_visible * n_hidden],
            db: vec![0.0; n_visible],
            dc: vec![0.0; n_hidden],
        }
    }

    pub fn zeros_like(params: &RbmParams) -> Self {
        Self::zeros(params.n_visible(), params.n_hidden())
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    /// Adds `sign · (p xᵀ, x, p)`.
    #[inline]
    pub fn accumulate(&mut self, x: &BinaryState, hidden_probs: &[f64], sign: f64) {
        let nv = self.n_visible;
        for i in x.ones_iter() {
            self.db[i] += sign;
            for (j, p) in hidden_probs.iter().enumerate() {
                self.dw[j * nv + i] += sign * p;
            }
        }
        for (dc, p) in self.dc.iter_mut().zip(hidden_probs) {
            *dc += sign * p;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values_mut().for_each(|v| *v *= k);
    }

    pub fn add_scaled(&mut self, other: &GradientEstimate, k: f64) {
        assert_eq!((self.n_visible, self.n_hidden), (other.n_visible, other.n_hidden));
        self.values_mut().zip(other.values()).for_each(|(a, b)| *a += k * b);
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.dw.iter().chain(&self.db).chain(&self.dc)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.dw.iter_mut().chain(self.db.iter_mut()).chain(self.dc.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &GradientEstimate) -> f64 {
        self.values().zip(other.values()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// One update per epoch using the whole training set.
    FullBatch,
    /// Shuffled minibatches of the given size.
    Minibatch(usize),
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchMode::FullBatch => f.write_str("full"),
            BatchMode::Minibatch(n) => write!(f, "minibatch:{n}"),
        }
    }
}

impl std::str::FromStr for BatchMode {
    type Err = RbmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" | "full-batch" => Ok(BatchMode::FullBatch),
            other => other
                .strip_prefix("minibatch:")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n > 0)
                .map(BatchMode::Minibatch)
                .ok_or_else(|| RbmError::Config(format!("invalid batch mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Gibbs steps per CD estimate.
    pub n_gibbs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub measure_every: usize,
    pub batch_mode: BatchMode,
    /// L2 decay applied to the weights only.
    pub weight_decay: f64,
    /// Training aborts once any |W_ij| exceeds this.
    pub max_abs_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_gibbs: 1,
            learning_rate: 0.1,
            momentum: 0.8,
            epochs: 50_000,
            measure_every: 50,
            batch_mode: BatchMode::FullBatch,
            weight_decay: 0.0,
            max_abs_weight: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RbmError::Config(m.to_string()));
        if self.n_gibbs == 0 {
            return bad("n_gibbs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.measure_every == 0 {
            return bad("measure_every must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if let BatchMode::Minibatch(0) = self.batch_mode {
            return bad("minibatch size must be positive");
        }
        Ok(())
    }
}

/// Initial parameters: `W ~ N(0, weight_sigma²)`, zero biases.
#[derive(Clone, Debug, PartialEq)]
pub struct InitSpec {
    pub n_hidden: usize,
    pub weight_sigma: f64,
}

impl InitSpec {
    pub fn new(n_hidden: usize) -> Self {
        Self { n_hidden, weight_sigma: 0.01 }
    }

    pub fn init(&self, n_visible: usize, rng: &mut RngStream) -> RbmParams {
        let mut p = RbmParams::zeros(n_visible, self.n_hidden);
        for w in p.w.iter_mut() {
            *w = rng.gaussian(self.weight_sigma);
        }
        p
    }
}

/// Scratch buffers reused across CD estimates.
#[derive(Clone, Debug)]
pub struct CdWorkspace {
    sampler: GibbsSampler,
    positive: Vec<f64>,
}

impl CdWorkspace {
    pub fn new(params: &RbmParams) -> Self {
        Self { sampler: GibbsSampler::new(params), positive: vec![0.0; params.n_hidden()] }
    }

    /// Adds the (unscaled) CD-n contribution of each state in `batch` to `grad`.
    fn accumulate(
        &mut self,
        params: &RbmParams,
        batch: &[BinaryState],
        n: usize,
        rng: &mut RngStream,
        grad: &mut GradientEstimate,
    ) {
        for x in batch {
            self.positive.copy_from_slice(self.sampler.hidden_probs(params, x));
            grad.accumulate(x, &self.positive, 1.0);
            let x_n = self.sampler.run_from_probs(params, &self.positive, n, rng);
            let negative = self.sampler.hidden_probs(params, &x_n);
            grad.accumulate(&x_n, negative, -1.0);
        }
    }
}

/// CD-n estimate of the mean log-likelihood gradient (ascent direction).
/// Both phases use the exact conditional expectation `E[h|·]`; the negative
/// phase is taken at the end of an n-step chain started at each batch state.
pub fn cd_gradient(
    params: &RbmParams,
    batch: &[BinaryState],
    n: usize,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(RbmError::InvalidArgument("empty batch".into()));
    }
    if n == 0 {
        return Err(RbmError::InvalidArgument("CD needs at least one Gibbs step".into()));
    }
    for x in batch {
        check_dim(params.n_visible(), x.len())?;
    }
    let mut grad = GradientEstimate::zeros_like(params);
    CdWorkspace::new(params).accumulate(params, batch, n, rng, &mut grad);
    grad.scale(1.0 / batch.len() as f64);
    Ok(grad)
}

/// Momentum SGD: `v' = m·v + lr·g`, `θ' = θ + v' - lr·decay·W` (decay on W only).
pub fn sgd_step(
    params: &RbmParams,
    grad: &GradientEstimate,
    velocity: &GradientEstimate,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(RbmParams, GradientEstimate)> {
    check_dim(params.n_visible(), grad.n_visible)?;
    check_dim(params.n_hidden(), grad.n_hidden)?;
    check_dim(params.n_visible(), velocity.n_visible)?;
    check_dim(params.n_hidden(), velocity.n_hidden)?;
    let mut v = velocity.clone();
    v.scale(cfg.momentum);
    v.add_scaled(grad, cfg.learning_rate);
    let mut next = params.clone();
    let decay = cfg.learning_rate * cfg.weight_decay;
    for (w, dv) in next.w.iter_mut().zip(&v.dw) {
        *w += dv - decay * *w;
    }
    for (b, dv) in next.b.iter_mut().zip(&v.db) {
        *b += dv;
    }
    for (c, dv) in next.c.iter_mut().zip(&v.dc) {
        *c += dv;
    }
    if !next.is_finite() || !v.is_finite() {
        return Err(RbmError::Diverged { epoch, reason: "non-finite parameter after update".into() });
    }
    Ok((next, v))
}

/// A completed training run.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: RbmParams,
    pub trace: TraceSeries,
}

/// A run that stopped early; `trace` holds every measurement taken before the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: RbmError,
    pub params: RbmParams,
    pub trace: TraceSeries,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} measurements recorded)", self.error, self.trace.len())
    }
}

impl std::error::Error for TrainFailure {}

fn measure(
    epoch: usize,
    params: &RbmParams,
    monitors: &mut [&mut dyn Monitor],
    trace: &mut TraceSeries,
) -> Result<()> {
    let mut row = Vec::with_capacity(trace.columns().len());
    for m in monitors.iter_mut() {
        row.extend(m.measure(epoch, params)?);
    }
    trace.push_row(epoch, row)
}

/// Trains from `init` for `cfg.epochs` epochs. Monitors run at epoch 0 and at
/// every multiple of `cfg.measure_every`. `rng` seeds initialization
/// (sub-stream 0) and the CD chains (sub-stream 1).
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    init: &InitSpec,
    rng: &RngStream,
    monitors: &mut [&mut dyn Monitor],
) -> std::result::Result<TrainResult, TrainFailure> {
    let mut params = init.init(dataset.n_visible(), &mut rng.split(0));
    let columns: Vec<String> = monitors.iter().flat_map(|m| m.columns()).collect();
    let mut trace = TraceSeries::new(columns);
    let fail = |error, params: &RbmParams, trace: TraceSeries| TrainFailure { error, params: params.clone(), trace };

    if let Err(e) = cfg.validate() {
        return Err(fail(e, &params, trace));
    }
    if dataset.is_empty() {
        return Err(fail(RbmError::InvalidArgument("empty dataset".into()), &params, trace));
    }
    let mut chain_rng = rng.split(1);
    let mut velocity = GradientEstimate::zeros_like(&params);
    let mut workspace = CdWorkspace::new(&params);
    let mut order: Vec<BinaryState> = dataset.states().to_vec();

    if let Err(e) = measure(0, &params, monitors, &mut trace) {
        return Err(fail(e, &params, trace));
    }
    for epoch in 1..=cfg.epochs {
        let batch_size = match cfg.batch_mode {
            BatchMode::FullBatch => order.len(),
            BatchMode::Minibatch(n) => {
                shuffle(&mut order, &mut chain_rng);
                n.min(order.len())
            }
        };
        for batch in order.chunks(batch_size) {
            let mut grad = GradientEstimate::zeros_like(&params);
            workspace.accumulate(&params, batch, cfg.n_gibbs, &mut chain_rng, &mut grad);
            grad.scale(1.0 / batch.len() as f64);
            match sgd_step(&params, &grad, &velocity, cfg, epoch) {
                Ok((p, v)) => {
                    params = p;
                    velocity = v;
                }
                Err(e) => return Err(fail(e, &params, trace)),
            }
            if params.max_abs_weight() > cfg.max_abs_weight {
                let e = RbmError::Diverged {
                    epoch,
                    reason: format!("weight magnitude exceeded {}", cfg.max_abs_weight),
                };
                return Err(fail(e, &params, trace));
            }
        }
        if epoch % cfg.measure_every == 0 {
            if let Err(e) = measure(epoch, &params, monitors, &mut trace) {
                return Err(fail(e, &params, trace));
            }
        }
    }
    Ok(TrainResult { params, trace })
}

fn shuffle(states: &mut [BinaryState], rng: &mut RngStream) {
    for i in (1..states.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        states.swap(i, j);
    }
}
