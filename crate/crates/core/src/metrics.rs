//! Reconstruction errors, training monitors, trace storage and stop detection.
//!
//! Trace CSV schema: a header row `epoch,<column>,...` followed by one row per
//! measurement epoch. Values use the shortest representation that parses back
//! to the same `f64`, so a write/read cycle is lossless. Run metadata lives in
//! a sidecar file of `key=value` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::datasets::Dataset;
use crate::error::{check_dim, RbmError, Result};
use crate::exact;
use crate::model::{softplus, BinaryState, LogSumExp, GibbsSampler, RbmParams, RngStream};
use crate::neighborhood::{log_sum_free_energy, log_xi_from_parts, mean_free_energy, sample_neighborhood, NeighborhoodIndex};

/// `R(x) = -log P(x | E[h|x])`: the visible conditional is evaluated at the
/// real-valued mean-field hidden vector.
pub fn recon_error_prob(params: &RbmParams, x: &BinaryState) -> Result<f64> {
    check_dim(params.n_visible(), x.len())?;
    let mut hidden = vec![0.0; params.n_hidden()];
    params.hidden_field(x, &mut hidden);
    hidden.iter_mut().for_each(|v| *v = crate::model::sigmoid(*v));
    let mut field = vec![0.0; params.n_visible()];
    params.visible_field_real(&hidden, &mut field);
    // -log σ(a) = softplus(-a), -log(1 - σ(a)) = softplus(a)
    Ok(field
        .iter()
        .enumerate()
        .map(|(i, &a)| if x.get(i) { softplus(-a) } else { softplus(a) })
        .sum())
}

/// `ε(x) = ||x - x_n||²` with `x_n` the end of an n-step Gibbs chain from `x`.
pub fn recon_error_sq(params: &RbmParams, x: &BinaryState, n: usize, rng: &mut RngStream) -> Result<f64> {
    check_dim(params.n_visible(), x.len())?;
    if n == 0 {
        return Err(RbmError::InvalidArgument("reconstruction chain needs at least one step".into()));
    }
    let x_n = GibbsSampler::new(params).chain(params, x, n, rng);
    Ok(x.hamming(&x_n) as f64)
}

/// Per-epoch record of every monitored quantity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceSeries {
    columns: Vec<String>,
    epochs: Vec<usize>,
    rows: Vec<Vec<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl TraceSeries {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, ..Default::default() }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn epochs(&self) -> &[usize] {
        &self.epochs
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn push_row(&mut self, epoch: usize, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(RbmError::Schema(format!("row has {} values for {} columns", row.len(), self.columns.len())));
        }
        if let Some(&last) = self.epochs.last() {
            if epoch <= last {
                return Err(RbmError::Schema(format!("epoch {epoch} does not follow {last}")));
            }
        }
        self.epochs.push(epoch);
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| RbmError::Schema(format!("unknown column {name:?}")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Keeps the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        self.epochs.truncate(n);
        self.rows.truncate(n);
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (e, row) in self.epochs.iter().zip(&self.rows) {
            let _ = write!(out, "{e}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(RbmError::Parse { line: 1, msg: "missing header".into() })?;
        let mut names = header.trim().split(',');
        if names.next() != Some("epoch") {
            return Err(RbmError::Schema("first column must be \"epoch\"".into()));
        }
        let mut trace = TraceSeries::new(names.map(str::to_string).collect());
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.trim().split(',');
            let epoch = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or(RbmError::Parse { line: line_no, msg: "bad epoch".into() })?;
            let row = fields
                .enumerate()
                .map(|(k, f)| {
                    f.parse::<f64>().map_err(|_| RbmError::Parse {
                        line: line_no,
                        msg: format!("bad value {f:?} in column {:?}", trace.columns.get(k).map_or("?", |s| s.as_str())),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != trace.columns.len() {
                return Err(RbmError::Parse {
                    line: line_no,
                    msg: format!("expected {} values, found {}", trace.columns.len(), row.len()),
                });
            }
            trace.push_row(epoch, row).map_err(|e| RbmError::Parse { line: line_no, msg: e.to_string() })?;
        }
        Ok(trace)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    /// Reads a trace and checks that every column in `required` is present.
    pub fn read_csv_expecting(path: impl AsRef<Path>, required: &[&str]) -> Result<Self> {
        let trace = Self::read_csv(path)?;
        for name in required {
            if !trace.columns.iter().any(|c| c == name) {
                return Err(RbmError::Schema(format!("missing column {name:?}")));
            }
        }
        Ok(trace)
    }

    pub fn metadata_string(&self) -> String {
        self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_metadata(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.metadata_string())?;
        Ok(())
    }
}

/// Column-wise mean over runs, restricted to the rows every run reached.
pub fn aggregate_mean(traces: &[TraceSeries]) -> Result<TraceSeries> {
    let first = traces.first().ok_or_else(|| RbmError::InvalidArgument("nothing to aggregate".into()))?;
    let rows = traces.iter().map(TraceSeries::len).min().unwrap_or(0);
    for t in traces {
        if t.columns != first.columns {
            return Err(RbmError::Schema("traces have different columns".into()));
        }
        if t.epochs[..rows] != first.epochs[..rows] {
            return Err(RbmError::Schema("traces have different measurement epochs".into()));
        }
    }
    let mut out = TraceSeries::new(first.columns.clone());
    for r in 0..rows {
        let mut row = vec![0.0; first.columns.len()];
        for t in traces {
            for (acc, v) in row.iter_mut().zip(&t.rows[r]) {
                *acc += v;
            }
        }
        row.iter_mut().for_each(|v| *v /= traces.len() as f64);
        out.push_row(first.epochs[r], row)?;
    }
    out.metadata.insert("runs_aggregated".into(), traces.len().to_string());
    Ok(out)
}

/// Something measured at every measurement epoch.
pub trait Monitor: Send {
    fn columns(&self) -> Vec<String>;
    fn measure(&mut self, epoch: usize, params: &RbmParams) -> Result<Vec<f64>>;
}

/// Exact log-likelihood (sum and mean over the training set).
pub struct LikelihoodMonitor {
    dataset: Dataset,
}

impl LikelihoodMonitor {
    pub fn new(dataset: Dataset) -> Self {
        Self { dataset }
    }
}

impl Monitor for LikelihoodMonitor {
    fn columns(&self) -> Vec<String> {
        vec!["log_likelihood_sum".into(), "log_likelihood_mean".into()]
    }

    fn measure(&mut self, _epoch: usize, params: &RbmParams) -> Result<Vec<f64>> {
        let e = exact::exact_eval(params, &self.dataset)?;
        Ok(vec![e.sum_ll, e.mean_ll])
    }
}

/// Mean `R(x)` and mean `ε(x)` over the training set.
pub struct ReconstructionMonitor {
    dataset: Dataset,
    n_gibbs: usize,
    /// Independent chains averaged per training state for `ε`.
    repeats: usize,
    rng: RngStream,
    /// Replay the same random stream at every measurement, so consecutive
    /// values differ only through the parameters.
    common_noise: bool,
}

impl ReconstructionMonitor {
    pub fn new(dataset: Dataset, n_gibbs: usize, repeats: usize, rng: RngStream) -> Self {
        Self { dataset, n_gibbs, repeats: repeats.max(1), rng, common_noise: false }
    }

    pub fn with_common_noise(mut self, on: bool) -> Self {
        self.common_noise = on;
        self
    }
}

impl Monitor for ReconstructionMonitor {
    fn columns(&self) -> Vec<String> {
        vec!["recon_prob".into(), "recon_sq".into()]
    }

    fn measure(&mut self, _epoch: usize, params: &RbmParams) -> Result<Vec<f64>> {
        let n = self.dataset.len() as f64;
        let mut prob = 0.0;
        let mut sq = 0.0;
        let mut sampler = GibbsSampler::new(params);
        let mut replay;
        let rng = if self.common_noise {
            replay = self.rng.clone();
            &mut replay
        } else {
            &mut self.rng
        };
        for x in self.dataset.states() {
            prob += recon_error_prob(params, x)?;
            for _ in 0..self.repeats {
                sq += x.hamming(&sampler.chain(params, x, self.n_gibbs, rng)) as f64;
            }
        }
        Ok(vec![prob / n, sq / (n * self.repeats as f64)])
    }
}

/// Denominator family for ξ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NeighborhoodVariant {
    /// Every state within distance d.
    All,
    /// States at distance exactly d.
    Shell,
    /// Random subset of the ball, sized like the training set.
    Sampled,
}

impl NeighborhoodVariant {
    pub fn label(&self) -> &'static str {
        match self {
            NeighborhoodVariant::All => "DA",
            NeighborhoodVariant::Shell => "DS",
            NeighborhoodVariant::Sampled => "DAt",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "DA" => Ok(NeighborhoodVariant::All),
            "DS" => Ok(NeighborhoodVariant::Shell),
            "DAt" => Ok(NeighborhoodVariant::Sampled),
            other => Err(RbmError::Config(format!("unknown neighborhood variant {other:?}"))),
        }
    }
}

pub fn log_xi_column(variant: NeighborhoodVariant, d: usize) -> String {
    format!("log_xi_{}_d{d}", variant.label())
}

pub fn sum_probs_column(variant: NeighborhoodVariant, d: usize) -> String {
    format!("sum_probs_{}_d{d}", variant.label())
}

/// Options for the sampled neighborhoods.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledOptions {
    /// Size of each sampled set; `None` means the training-set size.
    pub size: Option<usize>,
    pub include_training: bool,
    /// Redraw the sets at every measurement instead of once per run.
    pub resample_each_measurement: bool,
}

impl Default for SampledOptions {
    fn default() -> Self {
        Self { size: None, include_training: true, resample_each_measurement: false }
    }
}

/// `log ξ` (and optionally the exact denominator probability mass) for a set
/// of `(variant, d)` pairs. Free energies of each shell are summed once per
/// measurement and shared between the ball and shell variants.
pub struct NeighborhoodMonitor {
    train: Vec<BinaryState>,
    index: NeighborhoodIndex,
    specs: Vec<(NeighborhoodVariant, usize)>,
    with_sum_probs: bool,
    sampled_opts: SampledOptions,
    sampled: Vec<(usize, Vec<BinaryState>)>,
    rng: RngStream,
}

impl NeighborhoodMonitor {
    pub fn new(
        dataset: &Dataset,
        index: NeighborhoodIndex,
        specs: Vec<(NeighborhoodVariant, usize)>,
        with_sum_probs: bool,
        sampled_opts: SampledOptions,
        rng: RngStream,
    ) -> Result<Self> {
        for &(v, d) in &specs {
            if d > index.d_max() {
                return Err(RbmError::Config(format!("{} at d={d} needs an index with d_max >= {d}", v.label())));
            }
        }
        let mut m = Self {
            train: dataset.states().to_vec(),
            index,
            specs,
            with_sum_probs,
            sampled_opts,
            sampled: Vec::new(),
            rng,
        };
        m.draw_samples()?;
        Ok(m)
    }

    fn draw_samples(&mut self) -> Result<()> {
        let size = self.sampled_opts.size.unwrap_or(self.train.len());
        self.sampled.clear();
        for &(v, d) in &self.specs {
            if v == NeighborhoodVariant::Sampled {
                let s = sample_neighborhood(&self.index, d, size, &mut self.rng, self.sampled_opts.include_training)?;
                self.sampled.push((d, s.states));
            }
        }
        Ok(())
    }

    /// The sampled sets currently in use, as `(d, states)`.
    pub fn sampled_sets(&self) -> &[(usize, Vec<BinaryState>)] {
        &self.sampled
    }
}

impl Monitor for NeighborhoodMonitor {
    fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.specs.iter().map(|&(v, d)| log_xi_column(v, d)).collect();
        if self.with_sum_probs {
            cols.extend(self.specs.iter().map(|&(v, d)| sum_probs_column(v, d)));
        }
        cols
    }

    fn measure(&mut self, epoch: usize, params: &RbmParams) -> Result<Vec<f64>> {
        if self.sampled_opts.resample_each_measurement && epoch > 0 {
            self.draw_samples()?;
        }
        let d_needed = self
            .specs
            .iter()
            .filter(|(v, _)| *v != NeighborhoodVariant::Sampled)
            .map(|&(_, d)| d + 1)
            .max()
            .unwrap_or(0);
        let shell_sums: Vec<_> = (0..d_needed).map(|d| log_sum_free_energy(params, self.index.shell(d))).collect();
        let mean_train = mean_free_energy(params, &self.train);
        let mut sampled = self.sampled.iter();
        let mut denominators = Vec::with_capacity(self.specs.len());
        for &(v, d) in &self.specs {
            let (lse, count) = match v {
                NeighborhoodVariant::All => (
                    shell_sums[..=d].iter().fold(Default::default(), |a: LogSumExp, b| a.merge(*b)),
                    self.index.ball_size(d),
                ),
                NeighborhoodVariant::Shell => (shell_sums[d], self.index.shell(d).len()),
                NeighborhoodVariant::Sampled => {
                    let (_, states) = sampled.next().expect("one sample per sampled spec");
                    (log_sum_free_energy(params, states), states.len())
                }
            };
            denominators.push((lse, count));
        }
        let mut row: Vec<f64> = denominators
            .iter()
            .map(|&(lse, count)| if count == 0 { f64::NAN } else { log_xi_from_parts(mean_train, lse, count) })
            .collect();
        if self.with_sum_probs {
            let log_z = exact::log_partition(params)?;
            row.extend(denominators.iter().map(|&(lse, _)| (lse.value() - log_z).exp()));
        }
        Ok(row)
    }
}

/// Stores a copy of the parameters at every measurement.
#[derive(Default)]
pub struct SnapshotMonitor {
    pub snapshots: Vec<(usize, RbmParams)>,
}

impl Monitor for SnapshotMonitor {
    fn columns(&self) -> Vec<String> {
        Vec::new()
    }

    fn measure(&mut self, epoch: usize, params: &RbmParams) -> Result<Vec<f64>> {
        self.snapshots.push((epoch, params.clone()));
        Ok(Vec::new())
    }
}

/// Chosen stopping point.
#[derive(Clone, Debug, PartialEq)]
pub struct StopDecision {
    pub stop_epoch: usize,
    pub criterion: String,
    /// Raw (unsmoothed) column value at the stop epoch.
    pub trace_value_at_stop: f64,
}

/// Centered moving average; windows are truncated at the ends of the series.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let before = (w - 1) / 2;
    let after = w / 2;
    (0..values.len())
        .map(|k| {
            let lo = k.saturating_sub(before);
            let hi = (k + after).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Index of the maximum; the earliest wins ties. NaN never wins.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(k),
        }
    }
    best
}

/// Offline (`patience == 0`): epoch of the maximum of the smoothed column.
/// Online: scan the smoothed column and stop once it has failed to beat its
/// running maximum `patience` times in a row; the running-max epoch is returned.
pub fn detect_stop(trace: &TraceSeries, column: &str, smoothing_window: usize, patience: usize) -> Result<StopDecision> {
    let raw = trace.column(column)?;
    if raw.is_empty() || raw.len() < smoothing_window {
        return Err(RbmError::InvalidArgument(format!(
            "trace has {} rows, fewer than the smoothing window {smoothing_window}",
            raw.len()
        )));
    }
    let s = smooth(&raw, smoothing_window);
    let k = if patience == 0 {
        argmax(&s).ok_or_else(|| RbmError::InvalidArgument(format!("column {column:?} has no finite values")))?
    } else {
        let mut best: Option<usize> = None;
        let mut stale = 0;
        for (k, &v) in s.iter().enumerate() {
            match best {
                Some(b) if !(v > s[b]) => {
                    stale += 1;
                    if stale >= patience {
                        break;
                    }
                }
                _ if v.is_nan() => {}
                _ => {
                    best = Some(k);
                    stale = 0;
                }
            }
        }
        best.ok_or_else(|| RbmError::InvalidArgument(format!("column {column:?} has no finite values")))?
    };
    let mode = if patience == 0 { "offline".to_string() } else { format!("online:patience={patience}") };
    Ok(StopDecision {
        stop_epoch: trace.epochs()[k],
        criterion: format!("max {column} (window={smoothing_window}, {mode})"),
        trace_value_at_stop: raw[k],
    })
}

/// Fraction of consecutive pairs with `v[k+1] <= v[k]`.
pub fn fraction_non_increasing(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 1.0;
    }
    let ok = values.windows(2).filter(|w| w[1] <= w[0]).count();
    ok as f64 / (values.len() - 1) as f64
}
