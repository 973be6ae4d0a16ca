//! `mvtm`: learn, sample, and score sparse triangular transport maps for
//! multivariate spatial fields.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mvtm::commands::{self, FitOptions, ModelKind};
use mvtm::config::RunConfig;
use mvtm::train::Strategy;

#[derive(Parser)]
#[command(
    name = "mvtm",
    version,
    about = "Multivariate transport maps for spatial fields: simulate, fit, sample, score"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    /// Conditioning sets from initial latent positions, latent frozen.
    Cpp,
    /// Latent positions optimized, ordering fixed at its initial state.
    Fo,
    /// Latent positions optimized with periodic reordering.
    Or,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Cpp => Strategy::Cpp,
            StrategyArg::Fo => Strategy::Fo,
            StrategyArg::Or => Strategy::Or,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    /// A fitted transport map (output of `mvtm fit`).
    Mvtm,
    /// A parametric Gaussian baseline (output of `mvtm fit --parametric-out`).
    Parametric,
    /// The synthetic generator (truth.json from `mvtm simulate`).
    Truth,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Mvtm => ModelKind::Mvtm,
            KindArg::Parametric => ModelKind::Parametric,
            KindArg::Truth => ModelKind::Truth,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw train/val/test replicates from the synthetic generator.
    Simulate {
        /// JSON run configuration (its `dgp` section drives the generator).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for locations.csv, train/val/test.csv, truth.json, meta.json.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a transport map (stage 1 parametric init + stage 2 optimization).
    Fit {
        /// JSON run configuration (`train` and `parametric` sections).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding locations.csv, train.csv, val.csv.
        #[arg(long)]
        data: PathBuf,
        /// Output path of the fitted model JSON.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the optimization strategy from the config.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Overrides the training and stage-1 seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// 1-based process id: order that process last for conditional inference.
        #[arg(long, value_name = "PROCESS")]
        conditional: Option<usize>,
        /// Stop after stage 1 and write its parameters and latent positions.
        #[arg(long)]
        stage1_only: bool,
        /// Skip stage 1; with more than one process, requires --latent-positions.
        #[arg(long)]
        skip_stage1: bool,
        /// CSV of latent process positions (header l1,...,lL; one row per process).
        #[arg(long)]
        latent_positions: Option<PathBuf>,
        /// Writes the per-epoch objective trace to this CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also writes the stage-1 parametric model to this JSON.
        #[arg(long)]
        parametric_out: Option<PathBuf>,
    },
    /// Draw joint or conditional samples from a fitted map.
    Sample {
        /// Fitted model JSON from `mvtm fit`.
        #[arg(long)]
        model: PathBuf,
        /// Number of replicates to draw.
        #[arg(long)]
        count: usize,
        /// RNG seed for the draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV (same y1..yN layout as training data).
        #[arg(long)]
        out: PathBuf,
        /// Draw from the conditional of the target block given --observed.
        #[arg(long)]
        conditional: bool,
        /// Single-row CSV with the observed field (target entries ignored).
        #[arg(long)]
        observed: Option<PathBuf>,
    },
    /// Score held-out replicates under a fitted model or the generator.
    Score {
        /// Model file: fitted map JSON, parametric JSON, or truth.json.
        #[arg(long)]
        model: PathBuf,
        /// What kind of model file --model points at.
        #[arg(long, value_enum, default_value_t = KindArg::Mvtm)]
        kind: KindArg,
        /// Replicates to score (y1..yN CSV).
        #[arg(long)]
        data: PathBuf,
        /// Output CSV of per-replicate log densities plus their mean.
        #[arg(long)]
        out: PathBuf,
        /// Score the conditional density of the target block only.
        #[arg(long)]
        conditional: bool,
    },
    /// Standardize each column of a replicate CSV (zero mean, unit SD).
    Preprocess {
        /// Input replicates (y1..yN CSV).
        #[arg(long)]
        input: PathBuf,
        /// Standardized output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of the removed per-column means and SDs.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Run the simulation comparison grid and write a results table.
    Compare {
        /// JSON run configuration (`dgp`, `train`, `parametric`, `compare`).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV (long format: P,R,method,objective,...,seed).
        #[arg(long)]
        out: PathBuf,
        /// Report wall_seconds as 0 for byte-reproducible output.
        #[arg(long)]
        no_timing: bool,
        /// Replaces the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Loads the run config, or defaults when no --config was given.
fn load_config(path: &Option<PathBuf>) -> mvtm::Result<(RunConfig, String)> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok((RunConfig::default(), String::from("default"))),
    }
}

fn run() -> mvtm::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let (mut cfg, hash) = load_config(&config)?;
            if let Some(s) = seed {
                cfg.dgp.seed = s;
            }
            cfg.validate()?;
            commands::cmd_simulate(&cfg, &hash, &out)
        }
        Command::Fit {
            config,
            data,
            out,
            strategy,
            seed,
            conditional,
            stage1_only,
            skip_stage1,
            latent_positions,
            trace,
            parametric_out,
        } => {
            let (cfg, hash) = load_config(&config)?;
            cfg.validate()?;
            let opts = FitOptions {
                strategy: strategy.map(Into::into),
                conditional,
                stage1_only,
                skip_stage1,
                latent_positions,
                trace_out: trace,
                parametric_out,
                seed,
            };
            commands::cmd_fit(&cfg, &hash, &data, &out, &opts)
        }
        Command::Sample { model, count, seed, out, conditional, observed } => {
            commands::cmd_sample(&model, count, seed, &out, conditional, observed.as_deref())
        }
        Command::Score { model, kind, data, out, conditional } => {
            commands::cmd_score(&model, kind.into(), &data, &out, conditional)
        }
        Command::Preprocess { input, out, stats } => {
            commands::cmd_preprocess(&input, &out, stats.as_deref())
        }
        Command::Compare { config, out, no_timing, seed } => {
            let (cfg, hash) = load_config(&config)?;
            cfg.validate()?;
            log::info!("comparison config hash: {hash}");
            commands::cmd_compare(&cfg, &out, no_timing, seed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
