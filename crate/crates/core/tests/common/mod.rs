//! Brute-force reference computations shared by the integration tests.
//! Everything here enumerates joint states directly from the raw weights.
#![allow(dead_code)]

use rbm_core::{BinaryState, RbmParams, RngStream};

pub fn energy(p: &RbmParams, x: u64, h: u64) -> f64 {
    let (nv, nh) = (p.n_visible(), p.n_hidden());
    let bit = |v: u64, i: usize| ((v >> i) & 1) as f64;
    let mut e = 0.0;
    for i in 0..nv {
        e -= p.b[i] * bit(x, i);
    }
    for j in 0..nh {
        e -= p.c[j] * bit(h, j);
        for i in 0..nv {
            e -= p.w[j * nv + i] * bit(h, j) * bit(x, i);
        }
    }
    e
}

fn lse(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log Σ_h exp(-E(x,h))`.
pub fn log_unnorm(p: &RbmParams, x: u64) -> f64 {
    lse((0..1u64 << p.n_hidden()).map(|h| -energy(p, x, h)))
}

pub fn log_z(p: &RbmParams) -> f64 {
    lse((0..1u64 << p.n_visible()).flat_map(|x| (0..1u64 << p.n_hidden()).map(move |h| (x, h))).map(|(x, h)| -energy(p, x, h)))
}

/// Exact `P(x)` for every visible state, indexed by key.
pub fn probs(p: &RbmParams) -> Vec<f64> {
    let lz = log_z(p);
    (0..1u64 << p.n_visible()).map(|x| (log_unnorm(p, x) - lz).exp()).collect()
}

/// ξ straight from its definition: geometric mean of training probabilities
/// over the arithmetic mean of the denominator probabilities.
pub fn xi_definition(p: &RbmParams, train: &[BinaryState], denom: &[BinaryState]) -> f64 {
    let lz = log_z(p);
    let log_gm = train.iter().map(|x| log_unnorm(p, x.key()) - lz).sum::<f64>() / train.len() as f64;
    let am = denom.iter().map(|y| (log_unnorm(p, y.key()) - lz).exp()).sum::<f64>() / denom.len() as f64;
    log_gm.exp() / am
}

/// Exact mean log-likelihood gradient from joint enumeration.
pub fn gradient(p: &RbmParams, train: &[BinaryState]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (nv, nh) = (p.n_visible(), p.n_hidden());
    let bit = |v: u64, i: usize| ((v >> i) & 1) as f64;
    let mut dw = vec![0.0; nv * nh];
    let mut db = vec![0.0; nv];
    let mut dc = vec![0.0; nh];
    // Positive phase: E[h_j | x] by enumeration of h.
    for x in train {
        let x = x.key();
        let lu = log_unnorm(p, x);
        for h in 0..1u64 << nh {
            let q = (-energy(p, x, h) - lu).exp() / train.len() as f64;
            for j in 0..nh {
                dc[j] += q * bit(h, j);
                for i in 0..nv {
                    dw[j * nv + i] += q * bit(h, j) * bit(x, i);
                }
            }
        }
        for i in 0..nv {
            db[i] += bit(x, i) / train.len() as f64;
        }
    }
    let lz = log_z(p);
    for x in 0..1u64 << nv {
        for h in 0..1u64 << nh {
            let q = (-energy(p, x, h) - lz).exp();
            for i in 0..nv {
                db[i] -= q * bit(x, i);
            }
            for j in 0..nh {
                dc[j] -= q * bit(h, j);
                for i in 0..nv {
                    dw[j * nv + i] -= q * bit(h, j) * bit(x, i);
                }
            }
        }
    }
    (dw, db, dc)
}

pub fn random_params(nv: usize, nh: usize, sigma: f64, seed: u64) -> RbmParams {
    let mut rng = RngStream::new(seed);
    let mut p = RbmParams::random(nv, nh, sigma, &mut rng);
    for v in p.b.iter_mut().chain(p.c.iter_mut()) {
        *v = rng.gaussian(sigma);
    }
    p
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
