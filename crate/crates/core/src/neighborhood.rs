//! Hamming neighborhoods of a training set and the neighborhood ratio ξ.
//!
//! Shell `d` holds every state whose minimum Hamming distance to the training
//! set is exactly `d`; the ball of radius `d` is the union of shells `0..=d`.
//! ξ compares the geometric mean of the training-state probabilities with the
//! arithmetic mean probability over a set of neighbor states. Both means are
//! formed from the unnormalized marginals `F(x) = log Σ_h e^{-E(x,h)}`, so the
//! partition function cancels:
//!
//! `log ξ = mean_i F(x_i) - (logsumexp_j F(y_j) - log |D|)`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::datasets::{parse_state_lines, Dataset};
use crate::error::{check_dim, RbmError, Result};
use crate::exact;
use crate::model::{BinaryState, LogSumExp, RbmParams, RngStream};

/// Default cap on the number of states an index may hold.
pub const DEFAULT_STATE_BUDGET: usize = 1 << 26;

/// Free-energy sums run in fixed-size chunks merged in order, so results do
/// not depend on the thread count.
const PAR_CHUNK: usize = 4096;

/// Breadth-first Hamming shells around a training set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    n_visible: usize,
    dataset_keys: HashSet<u64>,
    shells: Vec<Vec<BinaryState>>,
}

impl NeighborhoodIndex {
    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn d_max(&self) -> usize {
        self.shells.len() - 1
    }

    pub fn shell(&self, d: usize) -> &[BinaryState] {
        &self.shells[d]
    }

    pub fn shells(&self) -> &[Vec<BinaryState>] {
        &self.shells
    }

    pub fn shell_sizes(&self) -> Vec<usize> {
        self.shells.iter().map(Vec::len).collect()
    }

    pub fn is_training_state(&self, s: &BinaryState) -> bool {
        self.dataset_keys.contains(&s.key())
    }

    /// Number of states within distance `d`.
    pub fn ball_size(&self, d: usize) -> usize {
        self.shells[..=d].iter().map(Vec::len).sum()
    }

    /// Every state within distance `d`, shell by shell.
    pub fn ball(&self, d: usize) -> Vec<BinaryState> {
        self.shells[..=d].iter().flatten().copied().collect()
    }
}

/// Builds shells `0..=d_max` with the default state budget.
pub fn build_index(dataset: &Dataset, d_max: usize) -> Result<NeighborhoodIndex> {
    build_index_with_budget(dataset, d_max, DEFAULT_STATE_BUDGET)
}

/// `shell[d+1]` = single-bit flips of `shell[d]` not already seen. Each shell
/// is sorted by packed key.
pub fn build_index_with_budget(dataset: &Dataset, d_max: usize, budget: usize) -> Result<NeighborhoodIndex> {
    if dataset.is_empty() {
        return Err(RbmError::InvalidArgument("empty dataset".into()));
    }
    let n = dataset.n_visible();
    let mut seen: HashSet<u64> = dataset.states().iter().map(BinaryState::key).collect();
    let dataset_keys = seen.clone();
    let mut first: Vec<BinaryState> = dataset.states().to_vec();
    first.sort();
    let mut shells = vec![first];
    let mut total = dataset.len();
    for d in 1..=d_max {
        let mut next = Vec::new();
        for s in &shells[d - 1] {
            for i in 0..n {
                let t = s.flipped(i);
                if seen.insert(t.key()) {
                    next.push(t);
                }
            }
            if total + next.len() > budget {
                return Err(RbmError::Capability(format!(
                    "neighborhood shell at distance {d} exceeds the budget of {budget} states"
                )));
            }
        }
        next.sort();
        total += next.len();
        shells.push(next);
    }
    Ok(NeighborhoodIndex { n_visible: n, dataset_keys, shells })
}

/// Minimum Hamming distance from `s` to any state of `dataset`.
pub fn min_distance(s: &BinaryState, dataset: &Dataset) -> u32 {
    dataset.states().iter().map(|x| x.hamming(s)).min().unwrap_or(u32::MAX)
}

/// A random subset of the ball `D_A(d)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledNeighborhood {
    pub d: usize,
    pub states: Vec<BinaryState>,
    pub seed: u64,
}

/// Uniform sample without replacement of `size` states from the ball of
/// radius `d` (the whole ball if it is smaller). With `include_training`
/// false the training states themselves are excluded from the pool.
pub fn sample_neighborhood(
    index: &NeighborhoodIndex,
    d: usize,
    size: usize,
    rng: &mut RngStream,
    include_training: bool,
) -> Result<SampledNeighborhood> {
    if d > index.d_max() {
        return Err(RbmError::InvalidArgument(format!("distance {d} beyond index d_max {}", index.d_max())));
    }
    let lo = if include_training { 0 } else { 1 };
    let mut pool: Vec<BinaryState> = index.shells[lo..=d.max(lo)].iter().flatten().copied().collect();
    if lo > d {
        pool.clear();
    }
    let take = size.min(pool.len());
    // Partial Fisher-Yates.
    for i in 0..take {
        let j = i + rng.below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(take);
    Ok(SampledNeighborhood { d, states: pool, seed: rng.seed() })
}

/// `logsumexp_j F(y_j)` over `states`, chunked and merged in order.
pub fn log_sum_free_energy(params: &RbmParams, states: &[BinaryState]) -> LogSumExp {
    states
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            let mut scratch = vec![0.0; params.n_hidden()];
            let mut acc = LogSumExp::default();
            for s in chunk {
                acc.push(params.free_energy_unchecked(s, &mut scratch));
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(LogSumExp::default(), LogSumExp::merge)
}

/// Mean of `F(x)` over `states`, accumulated relative to the first value so
/// that equal inputs give that value exactly.
pub fn mean_free_energy(params: &RbmParams, states: &[BinaryState]) -> f64 {
    let mut scratch = vec![0.0; params.n_hidden()];
    let mut values = states.iter().map(|s| params.free_energy_unchecked(s, &mut scratch));
    let Some(first) = values.next() else {
        return f64::NAN;
    };
    first + values.map(|v| v - first).sum::<f64>() / states.len() as f64
}

/// `log ξ` from the mean training free energy and the log-sum accumulator of
/// the denominator set of size `denom_len`.
#[inline]
pub fn log_xi_from_parts(mean_train_f: f64, denom: LogSumExp, denom_len: usize) -> f64 {
    (mean_train_f - denom.max()) - (denom.scaled_sum().ln() - (denom_len as f64).ln())
}

/// The neighborhood ratio, in log and linear form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Xi {
    pub log_xi: f64,
    pub xi: f64,
}

/// Evaluates ξ for `dataset` against the denominator set `denom_states`
/// without touching the partition function.
pub fn xi(params: &RbmParams, dataset: &Dataset, denom_states: &[BinaryState]) -> Result<Xi> {
    if denom_states.is_empty() {
        return Err(RbmError::InvalidArgument("empty denominator set".into()));
    }
    if dataset.is_empty() {
        return Err(RbmError::InvalidArgument("empty dataset".into()));
    }
    check_dim(params.n_visible(), dataset.n_visible())?;
    for s in denom_states {
        check_dim(params.n_visible(), s.len())?;
    }
    let log_xi = log_xi_from_parts(
        mean_free_energy(params, dataset.states()),
        log_sum_free_energy(params, denom_states),
        denom_states.len(),
    );
    Ok(Xi { log_xi, xi: log_xi.exp() })
}

/// `Σ_y P(y)` over `states`, using the exact partition function.
pub fn sum_probs(params: &RbmParams, states: &[BinaryState]) -> Result<f64> {
    for s in states {
        check_dim(params.n_visible(), s.len())?;
    }
    let log_z = exact::log_partition(params)?;
    Ok((log_sum_free_energy(params, states).value() - log_z).exp())
}

/// Text export: dataset-style headers, then `# shell=d` followed by that
/// shell's states.
pub fn index_to_string(index: &NeighborhoodIndex, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# name={name}");
    let _ = writeln!(out, "# n_visible={}", index.n_visible);
    let _ = writeln!(out, "# d_max={}", index.d_max());
    for (d, shell) in index.shells.iter().enumerate() {
        let _ = writeln!(out, "# shell={d}");
        for s in shell {
            let _ = writeln!(out, "{s}");
        }
    }
    out
}

pub fn save_index(index: &NeighborhoodIndex, name: &str, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, index_to_string(index, name))?;
    Ok(())
}

pub fn parse_index(text: &str) -> Result<NeighborhoodIndex> {
    let parsed = parse_state_lines(text)?;
    let mut shells: Vec<Vec<BinaryState>> = Vec::new();
    let mut marks: Vec<(usize, usize)> = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        if let Some(v) = raw.trim().strip_prefix("# shell=") {
            let d: usize = v.trim().parse().map_err(|_| RbmError::Parse { line: line_no + 1, msg: format!("bad shell index {v:?}") })?;
            if d != marks.len() {
                return Err(RbmError::Parse { line: line_no + 1, msg: format!("shell {d} out of order") });
            }
            marks.push((line_no + 1, d));
            shells.push(Vec::new());
        }
    }
    if shells.is_empty() {
        return Err(RbmError::Parse { line: 0, msg: "no shells".into() });
    }
    for (line, s) in parsed.states {
        let d = marks.iter().rposition(|(l, _)| *l < line).ok_or(RbmError::Parse {
            line,
            msg: "state before first shell marker".into(),
        })?;
        shells[d].push(s);
    }
    if shells[0].is_empty() {
        return Err(RbmError::Parse { line: 0, msg: "no states".into() });
    }
    let n_visible = parsed.n_visible.unwrap_or(shells[0][0].len());
    let dataset_keys = shells[0].iter().map(BinaryState::key).collect();
    Ok(NeighborhoodIndex { n_visible, dataset_keys, shells })
}

pub fn load_index(path: impl AsRef<Path>) -> Result<NeighborhoodIndex> {
    parse_index(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_bars_and_stripes, gen_random};

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn singleton_shells_are_binomial() {
        let d = Dataset::new("one", 4, vec!["0000".parse().unwrap()], "file").unwrap();
        let idx = build_index(&d, 6).unwrap();
        assert_eq!(idx.shell_sizes(), vec![1, 4, 6, 4, 1, 0, 0]);
        for k in 0..=4 {
            assert_eq!(idx.shell(k).len(), binom(4, k));
        }
    }

    #[test]
    fn shells_have_exact_distance_and_cover_ball() {
        let d = gen_random(10, 9).unwrap();
        let idx = build_index(&d, 4).unwrap();
        assert_eq!(idx.shell(0), {
            let mut s = d.states().to_vec();
            s.sort();
            s
        });
        let mut all = HashSet::new();
        for (k, shell) in idx.shells().iter().enumerate() {
            for s in shell {
                assert_eq!(min_distance(s, &d) as usize, k);
                assert!(all.insert(s.key()));
            }
        }
        let brute = (0..1u64 << 10).filter(|&k| min_distance(&BinaryState::from_key(k, 10), &d) <= 4).count();
        assert_eq!(brute, idx.ball_size(4));
    }

    #[test]
    fn budget_error_names_distance() {
        let bs = gen_bars_and_stripes();
        let err = build_index_with_budget(&bs, 3, 1000).unwrap_err();
        assert!(err.to_string().contains("distance 2"), "{err}");
    }

    #[test]
    fn sampling_contract() {
        let bs = gen_bars_and_stripes();
        let idx = build_index(&bs, 2).unwrap();
        let a = sample_neighborhood(&idx, 1, 30, &mut RngStream::new(5), true).unwrap();
        let b = sample_neighborhood(&idx, 1, 30, &mut RngStream::new(5), true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 30);
        let uniq: HashSet<_> = a.states.iter().map(|s| s.key()).collect();
        assert_eq!(uniq.len(), 30);
        assert!(a.states.iter().all(|s| min_distance(s, &bs) <= 1));

        let all = sample_neighborhood(&idx, 1, 10_000, &mut RngStream::new(5), true).unwrap();
        assert_eq!(all.states.len(), 510);
        let proper = sample_neighborhood(&idx, 1, 10_000, &mut RngStream::new(5), false).unwrap();
        assert_eq!(proper.states.len(), 480);
        assert!(proper.states.iter().all(|s| !idx.is_training_state(s)));
        assert!(sample_neighborhood(&idx, 3, 5, &mut RngStream::new(5), true).is_err());
    }

    #[test]
    fn xi_uniform_model_is_one() {
        let d = gen_random(10, 1).unwrap();
        let idx = build_index(&d, 2).unwrap();
        let p = RbmParams::zeros(10, 6);
        for k in 0..=2 {
            let v = xi(&p, &d, &idx.ball(k)).unwrap();
            assert_eq!(v.xi, 1.0);
            assert_eq!(v.log_xi, 0.0);
        }
        assert!(xi(&p, &d, &[]).is_err());
    }

    #[test]
    fn sum_probs_trivial() {
        let p = RbmParams::zeros(8, 3);
        let all: Vec<_> = (0..256).map(|k| BinaryState::from_key(k, 8)).collect();
        assert!((sum_probs(&p, &all).unwrap() - 1.0).abs() < 1e-12);
        assert!((sum_probs(&p, &all[..10]).unwrap() - 10.0 / 256.0).abs() < 1e-15);
        let mut rng = RngStream::new(2);
        let q = RbmParams::random(8, 3, 2.0, &mut rng);
        assert!((sum_probs(&q, &all).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn index_text_roundtrip() {
        let bs = gen_bars_and_stripes();
        let idx = build_index(&bs, 2).unwrap();
        let back = parse_index(&index_to_string(&idx, "BS")).unwrap();
        assert_eq!(back, idx);
        assert!(parse_index("0101\n").is_err());
    }
}
