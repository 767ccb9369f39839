use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heartvec::eval::EvalWeights;
use heartvec::pipeline::{self, EvalMode};
use heartvec::{ClassifierKind, PipelineConfig, Reduction, Result};

#[derive(Parser)]
#[command(name = "heartvec", version, about = "i-vector heart sound classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// UBM component count
    #[arg(long = "ubm-k")]
    ubm_k: Option<usize>,
    /// i-vector rank
    #[arg(long)]
    rank: Option<usize>,
    /// none, pca or vae
    #[arg(long)]
    reduce: Option<Reduction>,
    /// Reduced dimension
    #[arg(long)]
    dim: Option<usize>,
    /// gmm or svm
    #[arg(long)]
    classifier: Option<ClassifierKind>,
    /// Components per class GMM
    #[arg(long = "class-k")]
    class_k: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.ubm_k {
            c.ubm_components = v;
        }
        if let Some(v) = self.rank {
            c.ivector_rank = v;
        }
        if let Some(v) = self.reduce {
            c.reduction = v;
        }
        if let Some(v) = self.dim {
            c.reduced_dim = v;
        }
        if let Some(v) = self.classifier {
            c.classifier = v;
        }
        if let Some(v) = self.class_k {
            c.class_gmm_components = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train all stages and write a model bundle
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Reference file of `id,code[,quality]` lines
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score every WAV in a directory with a trained bundle
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Se/Sp/MAcc at a fixed threshold or over a sweep
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.0, conflicts_with = "sweep")]
        threshold: f64,
        #[arg(long)]
        sweep: bool,
        /// Maximum curve points kept in sweep mode
        #[arg(long, default_value_t = 200)]
        grid: usize,
        /// Curve CSV output for sweeps
        #[arg(long)]
        curve: Option<PathBuf>,
        /// wa1,wa2,wn1,wn2
        #[arg(long)]
        weights: Option<EvalWeights>,
    },
    /// MAcc against training-set size for each reduction method
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        weights: Option<EvalWeights>,
        /// Write the grid as CSV here as well as to stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write per-record MFCC matrices
    ExtractFeatures {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { data, labels, out, cfg } => {
            let config = cfg.resolve()?;
            let s = pipeline::cmd_train(&data, &labels, &config, &out)?;
            for w in &s.diagnostics.warnings {
                log::warn!("{w}");
            }
            println!("trained on {} records; bundle written to {}", s.records, out.display());
        }
        Command::Score { data, bundle, out } => {
            let scores = pipeline::cmd_score(&data, &bundle, &out)?;
            println!("scored {} records into {}", scores.len(), out.display());
        }
        Command::Evaluate {
            scores,
            labels,
            threshold,
            sweep,
            grid,
            curve,
            weights,
        } => {
            let mode = if sweep {
                EvalMode::Sweep { grid_size: grid }
            } else {
                EvalMode::Threshold(threshold)
            };
            let weights = weights.unwrap_or_default();
            let report = pipeline::cmd_evaluate(&scores, &labels, &weights, mode, curve.as_deref())?;
            println!("{}", report.summary_line());
        }
        Command::Ablate {
            data,
            labels,
            folds,
            weights,
            out,
            cfg,
        } => {
            let config = cfg.resolve()?;
            let table = pipeline::cmd_ablate(&data, &labels, &config, folds, &weights.unwrap_or_default())?;
            let csv = table.to_csv();
            print!("{csv}");
            if let Some(p) = out {
                std::fs::write(p, csv)?;
            }
        }
        Command::ExtractFeatures { data, out, cfg } => {
            let config = cfg.resolve()?;
            let n = pipeline::cmd_extract_features(&data, &out, &config)?;
            println!("wrote {n} feature matrices to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
