//! `ertalign`: synthetic corpora, training, prediction, evaluation, ablation
//! sweeps and cross-dataset matrices.

mod commands;
mod config;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ertalign::ert::InitMode;
use ertalign::features::FeatureMode;
use ertalign::Normalization;
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ertalign::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(ertalign::Error::InvalidArgument(_)) => 1,
            CliError::Core(e) if e.is_numeric() || matches!(e, ertalign::Error::Undefined(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Parser)]
#[command(name = "ertalign", version, about = "Heatmap-driven cascaded landmark alignment")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Mean,
    #[value(name = "3d")]
    Pose3d,
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Gray,
    Heatmap,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    init: Option<Init>,
    #[arg(long, global = true, value_enum)]
    features: Option<Features>,
    #[arg(long = "coarse-to-fine", global = true, value_enum)]
    coarse_to_fine: Option<Switch>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// pupils, corners or height.
    #[arg(long, global = true)]
    normalization: Option<Normalization>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: annotations, manifest and optional maps.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        write_maps: bool,
    },
    /// Train a cascade; writes model.ert and train.log.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict landmarks; writes predictions.jsonl.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a model; writes report.txt and ced.txt.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one model per dataset (plus a pooled one); writes cross.txt.
    Cross {
        #[arg(long = "train")]
        train: Vec<PathBuf>,
        #[arg(long = "test")]
        test: Vec<PathBuf>,
        #[arg(long)]
        no_pooled: bool,
    },
    /// Train and evaluate every init/feature/coarse-to-fine combination;
    /// writes ablation.txt.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    if let Some(i) = common.init {
        cfg.init = match i {
            Init::Mean => InitMode::MeanShape,
            Init::Pose3d => InitMode::Pose3D,
        };
    }
    if let Some(f) = common.features {
        cfg.features = match f {
            Features::Gray => FeatureMode::Gray,
            Features::Heatmap => FeatureMode::Heatmap,
        };
    }
    if let Some(c) = common.coarse_to_fine {
        cfg.coarse_to_fine = matches!(c, Switch::On);
    }
    if let Some(e) = common.epsilon {
        cfg.epsilon = e;
    }
    if let Some(n) = common.normalization {
        cfg.normalization = n;
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve(&cli.common)?;
    if let Some(w) = cfg.workers {
        if w == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Synth { count, write_maps } => {
            if let Some(c) = count {
                cfg.count = c;
            }
            cfg.write_maps |= write_maps;
            cfg.check_paths()?;
            commands::synth(&cfg)
        }
        Command::Train { data } => {
            cfg.train_data = data.or(cfg.train_data);
            cfg.check_paths()?;
            commands::train(&cfg)
        }
        Command::Predict { model, data } => {
            cfg.model = model.or(cfg.model);
            cfg.test_data = data.or(cfg.test_data);
            cfg.check_paths()?;
            commands::predict(&cfg)
        }
        Command::Eval { model, data } => {
            cfg.model = model.or(cfg.model);
            cfg.test_data = data.or(cfg.test_data);
            cfg.check_paths()?;
            commands::eval(&cfg)
        }
        Command::Cross { train, test, no_pooled } => {
            if !train.is_empty() {
                cfg.cross_train = train;
            }
            if !test.is_empty() {
                cfg.cross_test = test;
            }
            cfg.pooled &= !no_pooled;
            cfg.check_paths()?;
            commands::cross(&cfg)
        }
        Command::Ablate { data, test } => {
            cfg.train_data = data.or(cfg.train_data);
            cfg.test_data = test.or(cfg.test_data);
            cfg.check_paths()?;
            commands::ablate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
