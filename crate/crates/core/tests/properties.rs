mod common;

use common::*;
use proptest::prelude::*;
use rbm_core::datasets::{dataset_to_string, parse_dataset};
use rbm_core::exact::{log_partition, log_partition_visible};
use rbm_core::metrics::{argmax, detect_stop, smooth};
use rbm_core::neighborhood::{build_index, index_to_string, parse_index, xi};
use rbm_core::{BinaryState, Dataset, TraceSeries};

fn params_strategy() -> impl Strategy<Value = (usize, usize, f64, u64)> {
    (1usize..=8, 1usize..=6, prop::sample::select(vec![0.1, 1.0, 5.0]), any::<u64>())
}

fn dataset_from(nv: usize, keys: &[u64]) -> Dataset {
    let mut ks: Vec<u64> = keys.iter().map(|k| k & ((1 << nv) - 1)).collect();
    ks.sort_unstable();
    ks.dedup();
    Dataset::new("p", nv, ks.into_iter().map(|k| BinaryState::from_key(k, nv)).collect(), "prop").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn state_text_roundtrip(key in any::<u64>(), len in 1usize..=64) {
        let s = BinaryState::from_key(key, len);
        let back: BinaryState = s.to_string().parse().unwrap();
        prop_assert_eq!(back, s);
        prop_assert_eq!(s.hamming(&s.complement()) as usize, len);
    }

    #[test]
    fn hamming_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>(), len in 1usize..=64) {
        let (a, b, c) = (BinaryState::from_key(a, len), BinaryState::from_key(b, len), BinaryState::from_key(c, len));
        prop_assert_eq!(a.hamming(&b), b.hamming(&a));
        prop_assert!(a.hamming(&c) <= a.hamming(&b) + b.hamming(&c));
        prop_assert_eq!(a.hamming(&a), 0);
    }

    #[test]
    fn partition_paths_agree((nv, nh, sigma, seed) in params_strategy()) {
        let p = random_params(nv, nh, sigma, seed);
        let reference = log_z(&p);
        prop_assert!(rel_close(log_partition(&p).unwrap(), reference, 1e-10));
        prop_assert!(rel_close(log_partition_visible(&p).unwrap(), reference, 1e-10));
    }

    #[test]
    fn z_cancels_in_xi((nv, nh, sigma, seed) in params_strategy(), keys in prop::collection::vec(any::<u64>(), 1..6), d in 0usize..3) {
        let p = random_params(nv, nh, sigma, seed);
        let data = dataset_from(nv, &keys);
        let ball = build_index(&data, d).unwrap().ball(d);
        let ours = xi(&p, &data, &ball).unwrap();
        prop_assert!(rel_close(ours.xi, xi_definition(&p, data.states(), &ball), 1e-9));
    }

    #[test]
    fn full_space_xi_is_scaled_geometric_mean((nv, nh, sigma, seed) in params_strategy(), keys in prop::collection::vec(any::<u64>(), 1..6)) {
        let p = random_params(nv, nh, sigma, seed);
        let data = dataset_from(nv, &keys);
        let space: Vec<BinaryState> = (0..1u64 << nv).map(|k| BinaryState::from_key(k, nv)).collect();
        let pr = probs(&p);
        let log_gm = data.states().iter().map(|x| pr[x.key() as usize].ln()).sum::<f64>() / data.len() as f64;
        let expected = (nv as f64 * std::f64::consts::LN_2 + log_gm).exp();
        prop_assert!(rel_close(xi(&p, &data, &space).unwrap().xi, expected, 1e-9));
    }

    #[test]
    fn xi_over_training_set_is_at_most_one((nv, nh, sigma, seed) in params_strategy(), keys in prop::collection::vec(any::<u64>(), 1..8)) {
        // Geometric mean never exceeds the arithmetic mean.
        let p = random_params(nv, nh, sigma, seed);
        let data = dataset_from(nv, &keys);
        prop_assert!(xi(&p, &data, data.states()).unwrap().log_xi <= 1e-12);
    }

    #[test]
    fn shells_partition_the_ball(nv in 2usize..=10, keys in prop::collection::vec(any::<u64>(), 1..5), d in 0usize..4) {
        let data = dataset_from(nv, &keys);
        let index = build_index(&data, d).unwrap();
        for r in 0..=d {
            for s in index.shell(r) {
                let min = data.states().iter().map(|x| s.hamming(x)).min().unwrap();
                prop_assert_eq!(min as usize, r);
            }
        }
        let brute = (0..1u64 << nv)
            .filter(|&k| data.states().iter().any(|x| BinaryState::from_key(k, nv).hamming(x) as usize <= d))
            .count();
        prop_assert_eq!(index.ball_size(d), brute);
        let back = parse_index(&index_to_string(&index, "p")).unwrap();
        prop_assert_eq!(back.shell_sizes(), index.shell_sizes());
    }

    #[test]
    fn dataset_text_roundtrip(nv in 1usize..=20, keys in prop::collection::vec(any::<u64>(), 1..20)) {
        let data = dataset_from(nv, &keys);
        let back = parse_dataset(&dataset_to_string(&data)).unwrap();
        prop_assert_eq!(back.states(), data.states());
    }

    #[test]
    fn trace_csv_roundtrip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20)) {
        let mut t = TraceSeries::new(vec!["a".into(), "b".into(), "c".into()]);
        for (k, r) in rows.iter().enumerate() {
            t.push_row(k * 50, r.clone()).unwrap();
        }
        let back = TraceSeries::parse_csv(&t.to_csv_string()).unwrap();
        prop_assert_eq!(back.rows(), t.rows());
        prop_assert_eq!(back.epochs(), t.epochs());
    }

    #[test]
    fn smoothing_keeps_constants_and_bounds(v in prop::collection::vec(-100f64..100.0, 1..60), w in 1usize..9) {
        let s = smooth(&v, w);
        prop_assert_eq!(s.len(), v.len());
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        for x in &s {
            prop_assert!(*x >= lo - 1e-9 && *x <= hi + 1e-9);
        }
        let c = smooth(&vec![3.25; v.len()], w);
        prop_assert!(c.iter().all(|&x| (x - 3.25).abs() < 1e-12));
    }

    #[test]
    fn offline_stop_is_the_smoothed_argmax(v in prop::collection::vec(-100f64..100.0, 5..60)) {
        let mut t = TraceSeries::new(vec!["x".into()]);
        for (k, &x) in v.iter().enumerate() {
            t.push_row(k * 10, vec![x]).unwrap();
        }
        let d = detect_stop(&t, "x", 1, 0).unwrap();
        let k = argmax(&v).unwrap();
        prop_assert_eq!(d.stop_epoch, k * 10);
        prop_assert!(v[..k].iter().all(|&x| x < v[k]));
        // Online detection can only stop at or below the global maximum.
        let online = detect_stop(&t, "x", 1, 3).unwrap();
        prop_assert!(online.trace_value_at_stop <= v[k]);
    }
}
