//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tripletgan::sampler::RingSpec;
use tripletgan::sphere::SphereMetric;

use crate::checks::{CheckKind, CheckOptions};
use crate::commands::{resolve_config, CliError, EvalOptions, TrainOptions};
use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "tripletgan", version, about = "Triplet-loss GAN and vanilla GAN baseline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, images, a checkpoint and a manifest.
    Train(TrainArgs),
    /// Sample a checkpoint and write a mode or class report.
    Eval(EvalArgs),
    /// Run the numerical self-checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Arc,
    Chord,
}

impl From<MetricArg> for SphereMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Arc => SphereMetric::Arc,
            MetricArg::Chord => SphereMetric::Chord,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Named hyperparameter set, e.g. ring-triplet or mnist-vanilla-fast.
    #[arg(long)]
    pub preset: Option<String>,
    /// Config file (or a run's manifest.txt); its keys override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
}

impl ConfigArgs {
    fn overrides(&self, out: Option<PathBuf>) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            seed: self.seed,
            steps: self.steps,
            out_dir: out,
            metric: self.metric.map(Into::into),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Independent replicas run in parallel, seeds `seed..seed+jobs`.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Directory holding the MNIST IDX files; defaults to $MNIST_DIR.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Record real step times in metrics.csv (makes the file run-dependent).
    #[arg(long)]
    pub wall_clock: bool,
    #[arg(long, short)]
    pub quiet: bool,
}

impl TrainArgs {
    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            config: self.config.config.clone(),
            overrides: self.config.overrides(self.out.clone()),
            jobs: self.jobs,
            mnist_dir: self.mnist_dir.clone(),
            wall_clock: self.wall_clock,
            quiet: self.quiet,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n_samples: usize,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    /// Expected critic feature dimension; overrides the one from --preset/--config.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Trained digit classifier checkpoint; trained from MNIST and cached when absent.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
}

impl EvalArgs {
    pub fn options(&self) -> Result<EvalOptions, CliError> {
        let expected = if self.config.preset.is_some() || self.config.config.is_some() {
            Some(resolve_config(self.config.config.as_deref(), &self.config.overrides(None))?)
        } else {
            None
        };
        Ok(EvalOptions {
            checkpoint: self.checkpoint.clone(),
            n_samples: self.n_samples,
            out: self.out.clone(),
            seed: self.eval_seed,
            feature_dim: self.feature_dim.or(expected.as_ref().map(|c| c.feature_dim)),
            ring: expected.as_ref().map(|c| c.ring).filter(|r: &RingSpec| r.validate().is_ok()),
            classifier: self.classifier.clone(),
            mnist_dir: self.mnist_dir.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CheckArg {
    All,
    Grad,
    Clip,
    Triplets,
    Arc,
    Toy,
    Mmd,
    Ipm,
    IpmFamily,
    Antipodal,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, value_enum, default_value_t = CheckArg::All)]
    pub check: CheckArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MetricArg::Arc)]
    pub metric: MetricArg,
    #[arg(long, requires = "sigma2")]
    pub sigma1: Option<f64>,
    #[arg(long, requires = "sigma1")]
    pub sigma2: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub atoms: usize,
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
}

impl CheckArgs {
    pub fn options(&self) -> CheckOptions {
        let kind = match self.check {
            CheckArg::All => CheckKind::All,
            CheckArg::Grad => CheckKind::Grad,
            CheckArg::Clip => CheckKind::Clip,
            CheckArg::Triplets => CheckKind::Triplets,
            CheckArg::Arc => CheckKind::Arc,
            CheckArg::Toy => CheckKind::Toy,
            CheckArg::Mmd => CheckKind::Mmd,
            CheckArg::Ipm => CheckKind::Ipm,
            CheckArg::IpmFamily => CheckKind::IpmFamily,
            CheckArg::Antipodal => CheckKind::Antipodal,
        };
        CheckOptions {
            kind,
            seed: self.seed,
            metric: self.metric.into(),
            sigmas: self.sigma1.zip(self.sigma2),
            atoms: self.atoms,
            grid: self.grid,
        }
    }
}
