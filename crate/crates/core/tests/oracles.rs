mod common;

use common::*;
use rbm_core::exact::{exact_eval, exact_gradient, log_likelihood, log_partition, log_partition_visible};
use rbm_core::experiment::generate_samples;
use rbm_core::metrics::recon_error_prob;
use rbm_core::model::{free_energy_unnorm, gibbs_chain, hidden_activation_probs, sigmoid};
use rbm_core::neighborhood::{build_index, xi};
use rbm_core::training::cd_gradient;
use rbm_core::{BinaryState, Dataset, RbmParams, RngStream};

fn all_states(nv: usize) -> Vec<BinaryState> {
    (0..1u64 << nv).map(|k| BinaryState::from_key(k, nv)).collect()
}

fn random_dataset(nv: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed);
    let mut keys = std::collections::BTreeSet::new();
    while keys.len() < n {
        keys.insert(rng.below(1 << nv));
    }
    Dataset::new("t", nv, keys.into_iter().map(|k| BinaryState::from_key(k, nv)).collect(), "test").unwrap()
}

#[test]
fn partition_and_marginals_match_joint_enumeration() {
    for (k, &(nv, nh)) in [(1, 1), (3, 5), (6, 2), (5, 5), (8, 3)].iter().enumerate() {
        for sigma in [0.1, 1.0, 4.0] {
            let p = random_params(nv, nh, sigma, 100 + k as u64);
            let lz = log_z(&p);
            assert!(rel_close(log_partition(&p).unwrap(), lz, 1e-12));
            assert!(rel_close(log_partition_visible(&p).unwrap(), lz, 1e-12));
            let d = random_dataset(nv, 1.max((1 << nv) / 3), k as u64);
            let ev = exact_eval(&p, &d).unwrap();
            for (x, lp) in &ev.log_px {
                assert!((lp - (log_unnorm(&p, x.key()) - lz)).abs() < 1e-10);
                assert!((free_energy_unnorm(&p, x).unwrap() - log_unnorm(&p, x.key())).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn xi_equals_its_definition() {
    for seed in 0..20 {
        let p = random_params(7, 4, 1.5, seed);
        let d = random_dataset(7, 6, seed);
        let index = build_index(&d, 3).unwrap();
        for r in 0..=3 {
            let ball = index.ball(r);
            let ours = xi(&p, &d, &ball).unwrap().xi;
            assert!(rel_close(ours, xi_definition(&p, d.states(), &ball), 1e-9), "d={r}");
            let shell = index.shell(r);
            if !shell.is_empty() {
                assert!(rel_close(xi(&p, &d, shell).unwrap().xi, xi_definition(&p, d.states(), shell), 1e-9));
            }
        }
    }
}

#[test]
fn exact_gradient_matches_enumeration_and_finite_differences() {
    for seed in 0..10 {
        let p = random_params(5, 3, 1.0, seed);
        let d = random_dataset(5, 7, seed + 50);
        let g = exact_gradient(&p, &d).unwrap();
        let (dw, db, dc) = gradient(&p, d.states());
        for (a, b) in g.dw.iter().zip(&dw).chain(g.db.iter().zip(&db)).chain(g.dc.iter().zip(&dc)) {
            assert!((a - b).abs() < 1e-10);
        }
        // Mean gradient vs central differences of the summed log-likelihood.
        let h = 1e-5;
        let n = d.len() as f64;
        let fd = |f: &dyn Fn(&mut RbmParams, f64)| {
            let (mut a, mut b) = (p.clone(), p.clone());
            f(&mut a, h);
            f(&mut b, -h);
            (log_likelihood(&a, &d).unwrap() - log_likelihood(&b, &d).unwrap()) / (2.0 * h * n)
        };
        for j in 0..3 {
            for i in 0..5 {
                let v = fd(&|q: &mut RbmParams, e| *q.weight_mut(j, i) += e);
                assert!((v - g.dw[j * 5 + i]).abs() < 1e-6);
            }
            assert!((fd(&|q: &mut RbmParams, e| q.c[j] += e) - g.dc[j]).abs() < 1e-6);
        }
        for i in 0..5 {
            assert!((fd(&|q: &mut RbmParams, e| q.b[i] += e) - g.db[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn gibbs_chain_reaches_the_exact_distribution() {
    // A strongly peaked model over 4 visible units: frequencies of x_n over
    // independent chains match exact P(x) within 3σ per state.
    let mut p = random_params(4, 3, 2.0, 9);
    p.b[0] += 2.0;
    let exact = probs(&p);
    let draws = 20_000;
    let mut counts = [0usize; 16];
    let x0 = BinaryState::zeros(4);
    let mut rng = RngStream::new(77);
    for _ in 0..draws {
        counts[gibbs_chain(&p, &x0, 60, &mut rng).unwrap().x_n.key() as usize] += 1;
    }
    assert!(exact.iter().cloned().fold(0.0, f64::max) > 0.3, "model is peaked");
    for (c, q) in counts.iter().zip(&exact) {
        let sd = (q * (1.0 - q) / draws as f64).sqrt();
        assert!((*c as f64 / draws as f64 - q).abs() <= 3.0 * sd + 1e-4, "{c} vs {q}");
    }
}

#[test]
fn recon_error_prob_matches_two_step_oracle() {
    let p = random_params(5, 3, 1.2, 4);
    for x in all_states(5) {
        // E[h|x] from hidden enumeration, then the Bernoulli likelihood of x
        // under the visible conditional driven by that expectation.
        let lu = log_unnorm(&p, x.key());
        let mut mean_h = [0.0; 3];
        for h in 0..8u64 {
            let q = (-energy(&p, x.key(), h) - lu).exp();
            for (j, m) in mean_h.iter_mut().enumerate() {
                *m += q * ((h >> j) & 1) as f64;
            }
        }
        let mut r = 0.0;
        for i in 0..5 {
            let a = p.b[i] + (0..3).map(|j| p.weight(j, i) * mean_h[j]).sum::<f64>();
            let pi = sigmoid(a);
            r -= if x.get(i) { pi.ln() } else { (1.0 - pi).ln() };
        }
        assert!((recon_error_prob(&p, &x).unwrap() - r).abs() < 1e-10);
        let probs = hidden_activation_probs(&p, &x).unwrap();
        for (a, b) in probs.iter().zip(&mean_h) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn cd_n_mean_matches_exact_gradient() {
    // With n = 50 the chain has mixed, so the CD estimate is unbiased for the
    // exact gradient; the mean over 10^4 seeds sits within 3σ per coordinate.
    let p = random_params(4, 2, 0.8, 21);
    let d = random_dataset(4, 3, 5);
    let exact = exact_gradient(&p, &d).unwrap();
    let runs = 10_000;
    let dim = exact.values().count();
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for s in 0..runs {
        let g = cd_gradient(&p, d.states(), 50, &mut RngStream::new(s)).unwrap();
        for (k, v) in g.values().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    for (k, e) in exact.values().enumerate() {
        let mean = sum[k] / runs as f64;
        let sd = ((sq[k] / runs as f64 - mean * mean).max(0.0) / runs as f64).sqrt();
        assert!((mean - e).abs() <= 3.0 * sd + 1e-12, "coord {k}: {mean} vs {e} (sd {sd})");
    }
}

#[test]
fn uniform_model_samples_are_uniform() {
    let p = RbmParams::zeros(4, 3);
    let draws = 10_000;
    let samples = generate_samples(&p, draws, 10, 1, &mut RngStream::new(8)).unwrap();
    let mut counts = [0f64; 16];
    for s in &samples {
        counts[s.key() as usize] += 1.0;
    }
    let expected = draws as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 15 degrees of freedom: P(χ² > 37.70) = 0.001.
    assert!(chi2 < 37.70, "chi2 = {chi2}");
}
