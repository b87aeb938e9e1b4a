use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use answerspace_cli::commands;
use answerspace_cli::config::ExperimentConfig;

/// Joint classification/regression VQA answer head: benchmark
/// generation, training, evaluation, ablations, and out-of-vocabulary
/// experiments.
#[derive(Parser)]
#[command(name = "answerspace", version)]
struct Cli {
    /// Key=value experiment config; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Default seed for both data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root (default: $ANSWERSPACE_OUT or ./out).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct TrainArgs {
    /// Loss weight between classification and regression.
    #[arg(long)]
    lambda: Option<f64>,
    /// Hinge margin.
    #[arg(long)]
    delta: Option<f64>,
    /// Distance metric: euclidean, dot, or cosine.
    #[arg(long)]
    metric: Option<String>,
    /// Answer matrix initialization: glove, random, or shuffled-glove.
    #[arg(long)]
    scheme: Option<String>,
    /// Training iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated seeds (one checkpoint per seed).
    #[arg(long)]
    seeds: Option<String>,
    /// Freeze the answer matrix during training.
    #[arg(long)]
    freeze_matrix: bool,
    /// L2-normalize the projection output.
    #[arg(long)]
    normalize_projection: bool,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = self.lambda {
            cfg.apply_kv("train.lambda", &v.to_string())?;
        }
        if let Some(v) = self.delta {
            cfg.apply_kv("train.delta", &v.to_string())?;
        }
        if let Some(v) = &self.metric {
            cfg.apply_kv("train.metric", v)?;
        }
        if let Some(v) = &self.scheme {
            cfg.apply_kv("train.m_scheme", v)?;
        }
        if let Some(v) = self.iterations {
            cfg.apply_kv("train.iterations", &v.to_string())?;
        }
        if let Some(v) = self.lr {
            cfg.apply_kv("train.base_lr", &v.to_string())?;
        }
        if let Some(v) = &self.seeds {
            cfg.apply_kv("ensemble.seeds", v)?;
        }
        if self.freeze_matrix {
            cfg.apply_kv("train.m_trainable", "false")?;
        }
        if self.normalize_projection {
            cfg.apply_kv("train.normalize_projection", "true")?;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark, vocabularies, and embeddings.
    GenData {
        /// Number of questions to generate.
        #[arg(long)]
        questions: Option<usize>,
        /// Split mode: standard or oov.
        #[arg(long)]
        split: Option<String>,
        /// Fraction of questions on the train side.
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Feature noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train one checkpoint per seed.
    Train {
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Evaluate checkpoints (plus their ensemble) on the test split.
    Eval {
        /// Comma-separated checkpoint paths.
        #[arg(long)]
        checkpoints: String,
        /// Prediction-time lambda (defaults to each checkpoint's).
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train/evaluate across a lambda grid and emit mean +- sd rows.
    SweepLambda {
        /// Comma-separated lambda values.
        #[arg(long)]
        lambdas: Option<String>,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Evaluate a checkpoint on never-seen answers at lambda = 0.
    OovEval {
        /// Comma-separated checkpoint paths.
        #[arg(long)]
        checkpoints: String,
    },
    /// Consolidate metric reports into a comparison table.
    Report {
        /// Report files (key=value text).
        files: Vec<PathBuf>,
    },
    /// Run the finite-difference gradient suite; nonzero exit on failure.
    CheckGrads {
        /// Instances per (metric, lambda) combination.
        #[arg(long)]
        cases: Option<usize>,
    },
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out_dir) = &cli.out_dir {
        cfg.out_dir = out_dir.clone();
    }
    if cli.quiet {
        cfg.quiet = true;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = build_config(&cli)?;
    match &cli.command {
        Command::GenData {
            questions,
            split,
            train_fraction,
            noise,
        } => {
            if let Some(v) = questions {
                cfg.apply_kv("data.questions", &v.to_string())?;
            }
            if let Some(v) = split {
                cfg.apply_kv("data.split", v)?;
            }
            if let Some(v) = train_fraction {
                cfg.apply_kv("data.train_fraction", &v.to_string())?;
            }
            if let Some(v) = noise {
                cfg.apply_kv("data.sigma_noise", &v.to_string())?;
            }
            commands::cmd_gen_data(&cfg)?;
        }
        Command::Train { args } => {
            args.apply(&mut cfg)?;
            commands::cmd_train(&cfg)?;
        }
        Command::Eval {
            checkpoints,
            lambda,
        } => {
            cfg.apply_kv("eval.checkpoints", checkpoints)?;
            if let Some(v) = lambda {
                cfg.apply_kv("eval.lambda", &v.to_string())?;
            }
            commands::cmd_eval(&cfg)?;
        }
        Command::SweepLambda { lambdas, args } => {
            args.apply(&mut cfg)?;
            if let Some(v) = lambdas {
                cfg.apply_kv("sweep.lambdas", v)?;
            }
            commands::cmd_sweep_lambda(&cfg)?;
        }
        Command::OovEval { checkpoints } => {
            cfg.apply_kv("eval.checkpoints", checkpoints)?;
            commands::cmd_oov_eval(&cfg)?;
        }
        Command::Report { files } => {
            commands::cmd_report(&cfg, files)?;
        }
        Command::CheckGrads { cases } => {
            if let Some(v) = cases {
                cfg.apply_kv("grad.cases", &v.to_string())?;
            }
            commands::cmd_check_grads(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
