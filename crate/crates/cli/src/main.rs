use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rbm_core::datasets::{load_dataset, save_dataset, Dataset};
use rbm_core::experiment::{
    generate_samples, load_params, params_at_epoch, parse_seeds, run_experiment, write_pbm, ExperimentConfig,
};
use rbm_core::metrics::{aggregate_mean, detect_stop, TraceSeries};
use rbm_core::neighborhood::{build_index, save_index};
use rbm_core::{RbmError, RngStream};

#[derive(Parser)]
#[command(name = "rbmx", version, about = "Train binary RBMs and study neighborhood-based stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset file.
    GenData {
        /// `bars_and_stripes`, `labeled_shifter:edge=circular|zero` or `random:n=N:seed=S`.
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate Hamming shells around a dataset and write them to a file.
    BuildNeighborhood {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        d_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a multi-seed experiment from a config file.
    Train(TrainArgs),
    /// Average trace CSVs over their common epochs.
    Aggregate {
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the stopping epoch of one trace column.
    DetectStop {
        trace: PathBuf,
        #[arg(long)]
        column: String,
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// 0 selects offline detection (global maximum).
        #[arg(long, default_value_t = 0)]
        patience: usize,
    },
    /// Draw Gibbs samples from saved parameters, or from an experiment replayed to an epoch.
    Sample(SampleArgs),
    /// Render a dataset file as a PBM montage.
    Render {
        states: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 10)]
        per_row: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma list of seeds and `a..b` ranges.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    measure_every: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, conflicts_with = "config")]
    params: Option<PathBuf>,
    #[arg(long, requires_all = ["seed", "epoch"])]
    config: Option<PathBuf>,
    /// Training seed to replay (with --config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epoch: Option<usize>,
    #[arg(long, default_value_t = 30)]
    count: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 100)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    /// Output dataset file; samples are printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &RbmError) -> u8 {
    match e {
        RbmError::Diverged { .. } => 2,
        RbmError::Io(_) => 3,
        _ => 1,
    }
}

fn train(args: TrainArgs) -> Result<u8, RbmError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seeds {
        cfg.seeds = parse_seeds(&s)?;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(o) = args.out {
        cfg.out_dir = Some(o);
    }
    if let Some(m) = args.measure_every {
        cfg.train.measure_every = m;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let summary = run_experiment(&cfg)?;
    print!("{}", summary.report());
    Ok(if summary.any_diverged() { 2 } else { 0 })
}

fn sample(args: SampleArgs) -> Result<u8, RbmError> {
    let params = match (&args.params, &args.config) {
        (Some(p), _) => load_params(p)?,
        (None, Some(c)) => {
            let cfg = ExperimentConfig::load(c)?;
            let dataset = cfg.dataset.load()?;
            params_at_epoch(&cfg, &dataset, args.seed.unwrap_or_default(), args.epoch.unwrap_or_default())?
        }
        (None, None) => return Err(RbmError::Config("either --params or --config is required".into())),
    };
    let samples =
        generate_samples(&params, args.count, args.burn_in, args.thin, &mut RngStream::new(args.sample_seed))?;
    match args.out {
        Some(path) => {
            // Samples may repeat, so they are not stored as a Dataset.
            let mut text = format!("# name=samples\n# n_visible={}\n", params.n_visible());
            for s in &samples {
                text.push_str(&s.to_string());
                text.push('\n');
            }
            std::fs::write(path, text)?;
        }
        None => samples.iter().for_each(|s| println!("{s}")),
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, RbmError> {
    match cli.command {
        Command::GenData { spec, out } => {
            let d = Dataset::from_generator_spec(&spec)?;
            save_dataset(&d, &out)?;
            println!("{} states of {} units written to {}", d.len(), d.n_visible(), out.display());
        }
        Command::BuildNeighborhood { dataset, d_max, out } => {
            let d = load_dataset(&dataset)?;
            let index = build_index(&d, d_max)?;
            save_index(&index, &d.name, &out)?;
            let sizes: Vec<String> = index.shell_sizes().iter().map(usize::to_string).collect();
            println!("shell sizes: {}", sizes.join(" "));
        }
        Command::Train(args) => return train(args),
        Command::Aggregate { traces, out } => {
            if traces.is_empty() {
                return Err(RbmError::Config("no trace files given".into()));
            }
            let series = traces.iter().map(TraceSeries::read_csv).collect::<Result<Vec<_>, _>>()?;
            aggregate_mean(&series)?.write_csv(&out)?;
        }
        Command::DetectStop { trace, column, window, patience } => {
            let t = TraceSeries::read_csv(&trace)?;
            let d = detect_stop(&t, &column, window, patience)?;
            println!("criterion={}\nstop_epoch={}\nvalue={}", d.criterion, d.stop_epoch, d.trace_value_at_stop);
        }
        Command::Sample(args) => return sample(args),
        Command::Render { states, rows, cols, per_row, out } => {
            let parsed = rbm_core::datasets::parse_states_file(&std::fs::read_to_string(&states)?)?;
            write_pbm(&parsed, rows, cols, per_row, &out)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
