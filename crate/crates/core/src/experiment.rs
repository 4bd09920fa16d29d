//! Configuration-driven multi-seed experiments, sample generation and PBM
//! rendering.
//!
//! Configuration files are flat `key = value` lines grouped under `[section]`
//! headers; `#` starts a comment. Every key has a default, so an empty
//! `[dataset]` section with a `family` is a valid config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::datasets::{gen_bars_and_stripes, gen_labeled_shifter_with, gen_random, load_dataset, save_dataset, Dataset, ShiftEdge};
use crate::error::{RbmError, Result};
use crate::metrics::{
    aggregate_mean, detect_stop, LikelihoodMonitor, Monitor, NeighborhoodMonitor, NeighborhoodVariant,
    ReconstructionMonitor, SampledOptions, StopDecision, TraceSeries,
};
use crate::model::{BinaryState, GibbsSampler, RbmParams, RngStream};
use crate::neighborhood::build_index;
use crate::training::{train, InitSpec, TrainConfig};

/// Exact log-likelihood monitoring is on by default up to this many visible units.
pub const EXACT_DEFAULT_MAX_VISIBLE: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    BarsAndStripes,
    LabeledShifter(ShiftEdge),
    Random { n_visible: usize, seed: u64 },
    File(PathBuf),
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::BarsAndStripes => Ok(gen_bars_and_stripes()),
            DatasetSpec::LabeledShifter(edge) => Ok(gen_labeled_shifter_with(*edge)),
            DatasetSpec::Random { n_visible, seed } => gen_random(*n_visible, *seed),
            DatasetSpec::File(p) => load_dataset(p),
        }
    }

    /// Hidden-layer width used for this problem family when none is given.
    pub fn default_hidden(&self) -> usize {
        match self {
            DatasetSpec::BarsAndStripes => 8,
            _ => 10,
        }
    }

    /// Default learning rate. These are tuned values, chosen so that CD-1
    /// drives the exact log-likelihood through a clear maximum within 50000
    /// epochs. For random datasets larger rates also work for that, but the
    /// reconstruction errors then stall on a noisy plateau instead of
    /// decreasing for the whole run.
    pub fn default_learning_rate(&self) -> f64 {
        match self {
            DatasetSpec::BarsAndStripes => 0.5,
            DatasetSpec::LabeledShifter(_) => 0.3,
            _ => 0.015,
        }
    }
}

/// What to measure during training.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorConfig {
    /// `None`: on when the dataset has at most [`EXACT_DEFAULT_MAX_VISIBLE`] units.
    pub exact_ll: Option<bool>,
    pub reconstruction: bool,
    pub recon_sq_repeats: usize,
    /// Reuse one random stream for every reconstruction measurement.
    pub recon_common_noise: bool,
    pub neighborhoods: Vec<(NeighborhoodVariant, usize)>,
    /// `None`: follows the exact log-likelihood switch.
    pub sum_probs: Option<bool>,
    pub sampled: SampledOptions,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        let mut neighborhoods = Vec::new();
        for v in [NeighborhoodVariant::All, NeighborhoodVariant::Shell, NeighborhoodVariant::Sampled] {
            for d in 0..=3 {
                neighborhoods.push((v, d));
            }
        }
        Self {
            exact_ll: None,
            reconstruction: true,
            recon_sq_repeats: 1,
            recon_common_noise: true,
            neighborhoods,
            sum_probs: None,
            sampled: SampledOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StopConfig {
    pub window: usize,
    pub patience: usize,
    /// Columns to run stop detection on; empty means the log-likelihood and
    /// every `log_xi_*` column present.
    pub criteria: Vec<String>,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self { window: 5, patience: 0, criteria: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub n_hidden: usize,
    pub init_sigma: f64,
    pub train: TrainConfig,
    pub monitors: MonitorConfig,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub stop: StopConfig,
}

impl ExperimentConfig {
    /// Defaults for a dataset family: ten seeds, 50000 epochs measured every
    /// 50, CD-1, momentum 0.8, no weight decay.
    pub fn for_dataset(dataset: DatasetSpec) -> Self {
        let train = TrainConfig { learning_rate: dataset.default_learning_rate(), ..TrainConfig::default() };
        Self {
            n_hidden: dataset.default_hidden(),
            dataset,
            init_sigma: 0.01,
            train,
            monitors: MonitorConfig::default(),
            seeds: (1..=10).collect(),
            workers: 1,
            out_dir: None,
            stop: StopConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_hidden == 0 || self.n_hidden > crate::model::MAX_UNITS {
            return Err(RbmError::Config(format!("n_hidden must be in 1..={}", crate::model::MAX_UNITS)));
        }
        if !(self.init_sigma >= 0.0 && self.init_sigma.is_finite()) {
            return Err(RbmError::Config("init sigma must be finite and non-negative".into()));
        }
        if self.seeds.is_empty() {
            return Err(RbmError::Config("no seeds".into()));
        }
        if self.workers == 0 {
            return Err(RbmError::Config("workers must be positive".into()));
        }
        if self.stop.window == 0 {
            return Err(RbmError::Config("stop window must be positive".into()));
        }
        if let DatasetSpec::Random { n_visible, .. } = self.dataset {
            if n_visible == 0 || n_visible % 2 == 1 {
                return Err(RbmError::Config("random datasets need an even n_visible".into()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_sections(text)?;
        let get = |sec: &str, key: &str| entries.get(&(sec.to_string(), key.to_string())).map(String::as_str);
        for (sec, key) in entries.keys() {
            if !KNOWN_KEYS.contains(&(sec.as_str(), key.as_str())) {
                return Err(RbmError::Config(format!("unknown key {key:?} in [{sec}]")));
            }
        }
        let family = get("dataset", "family").ok_or_else(|| RbmError::Config("missing [dataset] family".into()))?;
        let dataset = match family {
            "bars_and_stripes" | "BS" => DatasetSpec::BarsAndStripes,
            "labeled_shifter" | "LSE" => DatasetSpec::LabeledShifter(match get("dataset", "edge").unwrap_or("circular") {
                "circular" => ShiftEdge::Circular,
                "zero" => ShiftEdge::ZeroFill,
                other => return Err(RbmError::Config(format!("unknown shifter edge {other:?}"))),
            }),
            "random" | "RAN" => DatasetSpec::Random {
                n_visible: parse_value(get("dataset", "n_visible").unwrap_or("10"), "dataset.n_visible")?,
                seed: parse_value(get("dataset", "seed").unwrap_or("0"), "dataset.seed")?,
            },
            "file" => DatasetSpec::File(
                get("dataset", "path").ok_or_else(|| RbmError::Config("file dataset needs a path".into()))?.into(),
            ),
            other => return Err(RbmError::Config(format!("unknown dataset family {other:?}"))),
        };
        let mut cfg = ExperimentConfig::for_dataset(dataset);
        macro_rules! set {
            ($sec:literal, $key:literal, $field:expr) => {
                if let Some(v) = get($sec, $key) {
                    $field = parse_value(v, concat!($sec, ".", $key))?;
                }
            };
        }
        set!("model", "n_hidden", cfg.n_hidden);
        set!("model", "init_sigma", cfg.init_sigma);
        set!("train", "n_gibbs", cfg.train.n_gibbs);
        set!("train", "learning_rate", cfg.train.learning_rate);
        set!("train", "momentum", cfg.train.momentum);
        set!("train", "epochs", cfg.train.epochs);
        set!("train", "measure_every", cfg.train.measure_every);
        set!("train", "batch_mode", cfg.train.batch_mode);
        set!("train", "weight_decay", cfg.train.weight_decay);
        set!("train", "max_abs_weight", cfg.train.max_abs_weight);
        set!("monitors", "reconstruction", cfg.monitors.reconstruction);
        set!("monitors", "recon_sq_repeats", cfg.monitors.recon_sq_repeats);
        set!("monitors", "recon_common_noise", cfg.monitors.recon_common_noise);
        set!("monitors", "sampled_include_training", cfg.monitors.sampled.include_training);
        set!("monitors", "sampled_resample", cfg.monitors.sampled.resample_each_measurement);
        set!("run", "workers", cfg.workers);
        set!("stop", "window", cfg.stop.window);
        set!("stop", "patience", cfg.stop.patience);
        cfg.monitors.exact_ll = parse_auto(get("monitors", "exact_ll"), "monitors.exact_ll")?;
        cfg.monitors.sum_probs = parse_auto(get("monitors", "sum_probs"), "monitors.sum_probs")?;
        if let Some(v) = get("monitors", "sampled_size") {
            cfg.monitors.sampled.size = if v == "auto" { None } else { Some(parse_value(v, "monitors.sampled_size")?) };
        }
        if let Some(v) = get("monitors", "neighborhoods") {
            cfg.monitors.neighborhoods = parse_neighborhoods(v)?;
        }
        if let Some(v) = get("run", "seeds") {
            cfg.seeds = parse_seeds(v)?;
        }
        if let Some(v) = get("run", "out") {
            cfg.out_dir = Some(v.into());
        }
        if let Some(v) = get("stop", "criteria") {
            cfg.stop.criteria = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; [`ExperimentConfig::parse`] reads it back to an
    /// equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::from("[dataset]\n");
        match &self.dataset {
            DatasetSpec::BarsAndStripes => s.push_str("family = bars_and_stripes\n"),
            DatasetSpec::LabeledShifter(edge) => {
                let e = if *edge == ShiftEdge::Circular { "circular" } else { "zero" };
                let _ = writeln!(s, "family = labeled_shifter\nedge = {e}");
            }
            DatasetSpec::Random { n_visible, seed } => {
                let _ = writeln!(s, "family = random\nn_visible = {n_visible}\nseed = {seed}");
            }
            DatasetSpec::File(p) => {
                let _ = writeln!(s, "family = file\npath = {}", p.display());
            }
        }
        let t = &self.train;
        let m = &self.monitors;
        let auto = |v: Option<bool>| v.map_or("auto".to_string(), |b| b.to_string());
        let _ = write!(
            s,
            "\n[model]\nn_hidden = {}\ninit_sigma = {}\n\n[train]\nn_gibbs = {}\nlearning_rate = {}\nmomentum = {}\n\
             epochs = {}\nmeasure_every = {}\nbatch_mode = {}\nweight_decay = {}\nmax_abs_weight = {}\n\n\
             [monitors]\nexact_ll = {}\nreconstruction = {}\nrecon_sq_repeats = {}\nrecon_common_noise = {}\nneighborhoods = {}\nsum_probs = {}\n\
             sampled_size = {}\nsampled_include_training = {}\nsampled_resample = {}\n\n[run]\nseeds = {}\nworkers = {}\n",
            self.n_hidden,
            self.init_sigma,
            t.n_gibbs,
            t.learning_rate,
            t.momentum,
            t.epochs,
            t.measure_every,
            t.batch_mode,
            t.weight_decay,
            t.max_abs_weight,
            auto(m.exact_ll),
            m.reconstruction,
            m.recon_sq_repeats,
            m.recon_common_noise,
            m.neighborhoods.iter().map(|(v, d)| format!("{}:{d}", v.label())).collect::<Vec<_>>().join(","),
            auto(m.sum_probs),
            m.sampled.size.map_or("auto".to_string(), |n| n.to_string()),
            m.sampled.include_training,
            m.sampled.resample_each_measurement,
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            self.workers,
        );
        if let Some(out) = &self.out_dir {
            let _ = writeln!(s, "out = {}", out.display());
        }
        let _ = write!(
            s,
            "\n[stop]\nwindow = {}\npatience = {}\ncriteria = {}\n",
            self.stop.window,
            self.stop.patience,
            self.stop.criteria.join(",")
        );
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

const KNOWN_KEYS: &[(&str, &str)] = &[
    ("dataset", "family"),
    ("dataset", "edge"),
    ("dataset", "n_visible"),
    ("dataset", "seed"),
    ("dataset", "path"),
    ("model", "n_hidden"),
    ("model", "init_sigma"),
    ("train", "n_gibbs"),
    ("train", "learning_rate"),
    ("train", "momentum"),
    ("train", "epochs"),
    ("train", "measure_every"),
    ("train", "batch_mode"),
    ("train", "weight_decay"),
    ("train", "max_abs_weight"),
    ("monitors", "exact_ll"),
    ("monitors", "reconstruction"),
    ("monitors", "recon_sq_repeats"),
    ("monitors", "recon_common_noise"),
    ("monitors", "neighborhoods"),
    ("monitors", "sum_probs"),
    ("monitors", "sampled_size"),
    ("monitors", "sampled_include_training"),
    ("monitors", "sampled_resample"),
    ("run", "seeds"),
    ("run", "workers"),
    ("run", "out"),
    ("stop", "window"),
    ("stop", "patience"),
    ("stop", "criteria"),
];

fn parse_sections(text: &str) -> Result<BTreeMap<(String, String), String>> {
    let mut section = String::new();
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| RbmError::Config(format!("line {}: expected key = value", idx + 1)))?;
        if section.is_empty() {
            return Err(RbmError::Config(format!("line {}: key outside of a section", idx + 1)));
        }
        if out.insert((section.clone(), k.trim().to_string()), v.trim().to_string()).is_some() {
            return Err(RbmError::Config(format!("line {}: duplicate key {:?}", idx + 1, k.trim())));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| RbmError::Config(format!("invalid value {v:?} for {what}")))
}

fn parse_auto(v: Option<&str>, what: &str) -> Result<Option<bool>> {
    match v {
        None | Some("auto") => Ok(None),
        Some(v) => Ok(Some(parse_value(v, what)?)),
    }
}

/// `DA:1,DS:2,DAt:1`
pub fn parse_neighborhoods(v: &str) -> Result<Vec<(NeighborhoodVariant, usize)>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (label, d) = item
                .split_once(':')
                .ok_or_else(|| RbmError::Config(format!("neighborhood {item:?} should look like DA:1")))?;
            Ok((NeighborhoodVariant::from_label(label.trim())?, parse_value(d.trim(), "neighborhood distance")?))
        })
        .collect()
}

/// A comma list of seeds and `a..b` half-open ranges.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (parse_value(a, "seed range")?, parse_value(b, "seed range")?);
            seeds.extend(a..b);
        } else {
            seeds.push(parse_value(part, "seed")?);
        }
    }
    Ok(seeds)
}

/// Outcome of one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: TraceSeries,
    pub params: RbmParams,
    /// Set when training stopped early.
    pub error: Option<String>,
    pub stops: Vec<StopDecision>,
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub dataset: Dataset,
    pub runs: Vec<SeedRun>,
    /// Mean over the runs that completed.
    pub aggregate: Option<TraceSeries>,
    pub aggregate_stops: Vec<StopDecision>,
}

impl ExperimentSummary {
    pub fn any_diverged(&self) -> bool {
        self.runs.iter().any(|r| r.error.is_some())
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset: {} ({})", self.dataset.name, self.dataset.generator_spec);
        for r in &self.runs {
            match &r.error {
                Some(e) => {
                    let _ = writeln!(s, "seed {}: FAILED after {} measurements: {e}", r.seed, r.trace.len());
                }
                None => {
                    let _ = writeln!(s, "seed {}: completed {} measurements", r.seed, r.trace.len());
                }
            }
            for d in &r.stops {
                let _ = writeln!(s, "  stop {} at epoch {} (value {})", d.criterion, d.stop_epoch, d.trace_value_at_stop);
            }
        }
        if !self.aggregate_stops.is_empty() {
            let _ = writeln!(s, "aggregate:");
            for d in &self.aggregate_stops {
                let _ = writeln!(s, "  stop {} at epoch {} (value {})", d.criterion, d.stop_epoch, d.trace_value_at_stop);
            }
        }
        s
    }
}

/// Builds the monitor set a config asks for.
pub fn build_monitors(cfg: &ExperimentConfig, dataset: &Dataset, seed_rng: &RngStream) -> Result<Vec<Box<dyn Monitor>>> {
    let exact = cfg.monitors.exact_ll.unwrap_or(dataset.n_visible() <= EXACT_DEFAULT_MAX_VISIBLE);
    let sum_probs = cfg.monitors.sum_probs.unwrap_or(exact);
    let mut monitors: Vec<Box<dyn Monitor>> = Vec::new();
    if exact {
        monitors.push(Box::new(LikelihoodMonitor::new(dataset.clone())));
    }
    if cfg.monitors.reconstruction {
        monitors.push(Box::new(ReconstructionMonitor::new(
            dataset.clone(),
            cfg.train.n_gibbs,
            cfg.monitors.recon_sq_repeats,
            seed_rng.split(2),
        )
        .with_common_noise(cfg.monitors.recon_common_noise)));
    }
    if !cfg.monitors.neighborhoods.is_empty() {
        let d_max = cfg.monitors.neighborhoods.iter().map(|&(_, d)| d).max().unwrap_or(0);
        let index = build_index(dataset, d_max)?;
        monitors.push(Box::new(NeighborhoodMonitor::new(
            dataset,
            index,
            cfg.monitors.neighborhoods.clone(),
            sum_probs,
            cfg.monitors.sampled.clone(),
            seed_rng.split(3),
        )?));
    }
    Ok(monitors)
}

fn stop_columns(cfg: &ExperimentConfig, trace: &TraceSeries) -> Vec<String> {
    if !cfg.stop.criteria.is_empty() {
        return cfg.stop.criteria.clone();
    }
    trace
        .columns()
        .iter()
        .filter(|c| c.as_str() == "log_likelihood_sum" || c.starts_with("log_xi_"))
        .cloned()
        .collect()
}

fn stops_for(cfg: &ExperimentConfig, trace: &TraceSeries) -> Vec<StopDecision> {
    if trace.len() < cfg.stop.window {
        return Vec::new();
    }
    stop_columns(cfg, trace)
        .iter()
        .filter_map(|c| detect_stop(trace, c, cfg.stop.window, cfg.stop.patience).ok())
        .collect()
}

fn seed_metadata(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("seed".into(), seed.to_string());
    m.insert("dataset".into(), dataset.name.clone());
    m.insert("generator".into(), dataset.generator_spec.clone());
    m.insert("n_visible".into(), dataset.n_visible().to_string());
    m.insert("n_hidden".into(), cfg.n_hidden.to_string());
    m.insert("init".into(), format!("W~N(0,{}^2),b=0,c=0", cfg.init_sigma));
    m.insert("n_gibbs".into(), cfg.train.n_gibbs.to_string());
    m.insert("learning_rate".into(), cfg.train.learning_rate.to_string());
    m.insert("momentum".into(), cfg.train.momentum.to_string());
    m.insert("weight_decay".into(), cfg.train.weight_decay.to_string());
    m.insert("epochs".into(), cfg.train.epochs.to_string());
    m.insert("measure_every".into(), cfg.train.measure_every.to_string());
    m.insert("batch_mode".into(), cfg.train.batch_mode.to_string());
    m
}

/// Trains one seed with the configured monitors.
pub fn run_seed(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<SeedRun> {
    let rng = RngStream::new(seed);
    let mut monitors = build_monitors(cfg, dataset, &rng)?;
    let mut refs: Vec<&mut dyn Monitor> = monitors.iter_mut().map(|m| m.as_mut() as &mut dyn Monitor).collect();
    let init = InitSpec { n_hidden: cfg.n_hidden, weight_sigma: cfg.init_sigma };
    let (mut trace, params, error) = match train(dataset, &cfg.train, &init, &rng, &mut refs) {
        Ok(r) => (r.trace, r.params, None),
        Err(f) => {
            if !matches!(f.error, RbmError::Diverged { .. }) {
                return Err(f.error);
            }
            (f.trace, f.params, Some(f.error.to_string()))
        }
    };
    trace.metadata = seed_metadata(cfg, dataset, seed);
    let stops = stops_for(cfg, &trace);
    Ok(SeedRun { seed, trace, params, error, stops })
}

/// Parameters of seed `seed` after `epoch` epochs. Monitors draw from their
/// own streams, so replaying the training alone reproduces them exactly.
pub fn params_at_epoch(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64, epoch: usize) -> Result<RbmParams> {
    let train_cfg = TrainConfig { epochs: epoch, measure_every: epoch.max(1), ..cfg.train.clone() };
    let init = InitSpec { n_hidden: cfg.n_hidden, weight_sigma: cfg.init_sigma };
    train(dataset, &train_cfg, &init, &RngStream::new(seed), &mut [])
        .map(|r| r.params)
        .map_err(|f| f.error)
}

/// Runs every seed (in parallel over `cfg.workers` threads), aggregates the
/// completed runs and, when an output directory is set, writes all artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let dataset = cfg.dataset.load()?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| RbmError::Config(e.to_string()))?;
    let runs: Vec<SeedRun> = pool.install(|| {
        cfg.seeds.par_iter().map(|&seed| run_seed(cfg, &dataset, seed)).collect::<Result<Vec<_>>>()
    })?;
    let completed: Vec<TraceSeries> = runs.iter().filter(|r| r.error.is_none()).map(|r| r.trace.clone()).collect();
    let aggregate = if completed.is_empty() {
        None
    } else {
        let mut a = aggregate_mean(&completed)?;
        let mut meta = seed_metadata(cfg, &dataset, 0);
        meta.remove("seed");
        meta.insert(
            "seeds".into(),
            runs.iter().filter(|r| r.error.is_none()).map(|r| r.seed.to_string()).collect::<Vec<_>>().join(","),
        );
        meta.insert("runs_aggregated".into(), completed.len().to_string());
        a.metadata = meta;
        Some(a)
    };
    let aggregate_stops = aggregate.as_ref().map(|a| stops_for(cfg, a)).unwrap_or_default();
    let summary = ExperimentSummary { dataset, runs, aggregate, aggregate_stops };
    if let Some(dir) = &cfg.out_dir {
        write_outputs(cfg, &summary, dir)?;
    }
    Ok(summary)
}

fn write_outputs(cfg: &ExperimentConfig, summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("config.txt"), cfg.to_config_string())?;
    save_dataset(&summary.dataset, dir.join("dataset.txt"))?;
    for r in &summary.runs {
        r.trace.write_csv(dir.join(format!("seed_{}.csv", r.seed)))?;
        let mut meta = r.trace.clone();
        if let Some(e) = &r.error {
            meta.metadata.insert("error".into(), e.clone());
        }
        meta.write_metadata(dir.join(format!("seed_{}.meta", r.seed)))?;
        save_params(&r.params, dir.join(format!("seed_{}.params", r.seed)))?;
    }
    if let Some(a) = &summary.aggregate {
        a.write_csv(dir.join("aggregate.csv"))?;
        a.write_metadata(dir.join("aggregate.meta"))?;
    }
    std::fs::write(dir.join("stop_report.txt"), summary.report())?;
    Ok(())
}

/// Gibbs samples from `params`: a random start, `burn_in` discarded steps,
/// then one visible state every `thin` steps.
pub fn generate_samples(
    params: &RbmParams,
    count: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut RngStream,
) -> Result<Vec<BinaryState>> {
    if count == 0 {
        return Err(RbmError::InvalidArgument("sample count must be at least 1".into()));
    }
    let thin = thin.max(1);
    let mut sampler = GibbsSampler::new(params);
    let mut x = rng.random_state(params.n_visible());
    if burn_in > 0 {
        x = sampler.chain(params, &x, burn_in, rng);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        x = sampler.chain(params, &x, thin, rng);
        out.push(x);
    }
    Ok(out)
}

/// Plain-text parameter file: `# n_visible=`, `# n_hidden=` headers, then
/// `b`, `c` and one `w` line per hidden unit.
pub fn params_to_string(p: &RbmParams) -> String {
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    let mut s = format!("# n_visible={}\n# n_hidden={}\nb {}\nc {}\n", p.n_visible(), p.n_hidden(), join(&p.b), join(&p.c));
    for j in 0..p.n_hidden() {
        let _ = writeln!(s, "w {}", join(&p.w[j * p.n_visible()..(j + 1) * p.n_visible()]));
    }
    s
}

pub fn parse_params(text: &str) -> Result<RbmParams> {
    let (mut b, mut c, mut w) = (None, None, Vec::new());
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let values = parts
            .map(|v| v.parse::<f64>().map_err(|_| RbmError::Parse { line: idx + 1, msg: format!("bad number {v:?}") }))
            .collect::<Result<Vec<f64>>>()?;
        match tag {
            "b" => b = Some(values),
            "c" => c = Some(values),
            "w" => w.extend(values),
            other => return Err(RbmError::Parse { line: idx + 1, msg: format!("unknown row tag {other:?}") }),
        }
    }
    let b = b.ok_or(RbmError::Parse { line: 0, msg: "missing b row".into() })?;
    let c = c.ok_or(RbmError::Parse { line: 0, msg: "missing c row".into() })?;
    RbmParams::new(w, b, c)
}

pub fn save_params(p: &RbmParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, params_to_string(p))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<RbmParams> {
    parse_params(&std::fs::read_to_string(path)?)
}

/// ASCII PBM (`P1`) image tiling `states` as `rows × cols` tiles,
/// `per_row` tiles to a line, separated by one white pixel. Bit 1 is black.
pub fn render_pbm(states: &[BinaryState], rows: usize, cols: usize, per_row: usize) -> Result<String> {
    if states.is_empty() {
        return Err(RbmError::InvalidArgument("nothing to render".into()));
    }
    for s in states {
        if rows * cols != s.len() {
            return Err(RbmError::InvalidArgument(format!("{rows}x{cols} tiles cannot hold {} bits", s.len())));
        }
    }
    let per_row = per_row.clamp(1, states.len());
    let tile_rows = states.len().div_ceil(per_row);
    let width = per_row * cols + per_row - 1;
    let height = tile_rows * rows + tile_rows - 1;
    let mut pixels = vec![vec![0u8; width]; height];
    for (k, s) in states.iter().enumerate() {
        let (ty, tx) = (k / per_row, k % per_row);
        for r in 0..rows {
            for c in 0..cols {
                pixels[ty * (rows + 1) + r][tx * (cols + 1) + c] = s.get(r * cols + c) as u8;
            }
        }
    }
    let mut out = format!("P1\n{width} {height}\n");
    for row in pixels {
        let line: Vec<&str> = row.iter().map(|&p| if p == 1 { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_pbm(states: &[BinaryState], rows: usize, cols: usize, per_row: usize, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_pbm(states, rows, cols, per_row)?)?;
    Ok(())
}

/// Reads an ASCII PBM; returns `(width, height, pixels row-major)`.
pub fn parse_pbm(text: &str) -> Result<(usize, usize, Vec<bool>)> {
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    if tokens.next() != Some("P1") {
        return Err(RbmError::Parse { line: 1, msg: "not an ASCII PBM".into() });
    }
    let dim = |t: Option<&str>| -> Result<usize> {
        t.and_then(|v| v.parse().ok()).ok_or(RbmError::Parse { line: 2, msg: "bad dimensions".into() })
    };
    let (w, h) = (dim(tokens.next())?, dim(tokens.next())?);
    let mut pixels = Vec::with_capacity(w * h);
    for t in tokens {
        for ch in t.chars() {
            match ch {
                '0' => pixels.push(false),
                '1' => pixels.push(true),
                _ => return Err(RbmError::Parse { line: 0, msg: format!("bad pixel {ch:?}") }),
            }
        }
    }
    if pixels.len() != w * h {
        return Err(RbmError::Parse { line: 0, msg: format!("expected {} pixels, found {}", w * h, pixels.len()) });
    }
    Ok((w, h, pixels))
}

/// Tiles of a montage produced by [`render_pbm`].
pub fn pbm_tiles(text: &str, rows: usize, cols: usize) -> Result<Vec<BinaryState>> {
    let (w, h, px) = parse_pbm(text)?;
    let per_row = (w + 1) / (cols + 1);
    let tile_rows = (h + 1) / (rows + 1);
    let mut out = Vec::new();
    for ty in 0..tile_rows {
        for tx in 0..per_row {
            let mut s = BinaryState::zeros(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    s.set(r * cols + c, px[(ty * (rows + 1) + r) * w + tx * (cols + 1) + c]);
                }
            }
            out.push(s);
        }
    }
    Ok(out)
}
