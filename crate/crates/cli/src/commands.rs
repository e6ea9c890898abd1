//! The `train`, `eval` and `check` commands, callable without the argument parser.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use thiserror::Error;
use tripletgan::autodiff::Array2;
use tripletgan::evaluation::{
    class_report, classify_digits, heatmap, mode_report, train_classifier, Classifier, ClassifierConfig,
    CoverageThresholds, EvalError, HeatmapConfig, ModeReport,
};
use tripletgan::models::{read_checkpoint, write_checkpoint, GanNetworks, ModelError};
use tripletgan::sampler::{load_mnist, sample_noise, MnistData, RealSource, RingSpec, Rng};
use tripletgan::trainer::{train, DataKind, StepRecord, TrainConfig, TrainError};

use crate::checks::{run_checks, CheckOptions, CheckRow};
use crate::config::{parse_config, parse_config_str, to_config_text, ConfigError, Overrides};
use crate::manifest::RunManifest;

pub const METRICS_HEADER: &str = "step,critic_loss,generator_loss,cross_term,intra_term,wall_ms";
/// Stream offset for evaluation noise, kept apart from every training stream.
pub const EVAL_STREAM: u64 = 1 << 40;
pub const RING_EVAL_SAMPLES: usize = 10_000;
const MNIST_GRID: usize = 8;
/// Classifier accuracy below which class reports are flagged as unreliable.
pub const MIN_CLASSIFIER_ACCURACY: f64 = 0.97;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Formats a float for CSV: 17 significant digits, `.` as separator.
pub fn csv_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn metrics_row(r: &StepRecord, wall_clock: bool) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.step,
        csv_float(r.critic_loss),
        csv_float(r.generator_loss),
        csv_float(r.cross_term),
        csv_float(r.intra_term),
        csv_float(if wall_clock { r.wall_ms } else { 0.0 })
    )
}

/// Finds the training IDX pair in `dir`, accepting both common file names.
pub fn load_mnist_dir(dir: &Path) -> Result<MnistData, CliError> {
    let pick = |names: &[&str]| names.iter().map(|n| dir.join(n)).find(|p| p.exists());
    let images = pick(&["train-images-idx3-ubyte", "train-images.idx3-ubyte"]);
    let labels = pick(&["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]);
    match (images, labels) {
        (Some(i), Some(l)) => load_mnist(&i, &l).map_err(|e| CliError::Failed(e.to_string())),
        _ => Err(CliError::Usage(format!(
            "{} does not contain train-images-idx3-ubyte and train-labels-idx1-ubyte",
            dir.display()
        ))),
    }
}

/// `--mnist-dir`, else `MNIST_DIR`.
pub fn mnist_dir(flag: Option<&Path>) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("MNIST_DIR").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("MNIST runs need --mnist-dir or the MNIST_DIR environment variable".into()))
}

/// Padded MNIST rows tiled into one grayscale image, `per_row` digits across.
pub fn image_grid_pgm(images: &Array2, side: usize, per_row: usize) -> Vec<u8> {
    let n = images.rows();
    let rows = n.div_ceil(per_row).max(1);
    let (w, h) = (per_row * side, rows * side);
    let mut pixels = vec![0u8; w * h];
    for i in 0..n {
        let (gr, gc) = (i / per_row, i % per_row);
        for y in 0..side {
            for x in 0..side {
                let v = images.get(i, y * side + x);
                pixels[(gr * side + y) * w + gc * side + x] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

/// Generator samples in chunks to bound graph memory.
pub fn generate(nets: &GanNetworks, z: &Array2) -> Result<Array2, ModelError> {
    let mut out: Option<Array2> = None;
    for start in (0..z.rows()).step_by(1000) {
        let idx: Vec<usize> = (start..(start + 1000).min(z.rows())).collect();
        let part = nets.generate(&z.select_rows(&idx))?;
        out = Some(match out {
            None => part,
            Some(acc) => acc.vstack(&part)?,
        });
    }
    out.ok_or_else(|| ModelError::InvalidSpec("no noise rows".into()))
}

fn eval_noise(seed: u64, stream: u64, n: usize, latent: usize) -> Array2 {
    sample_noise(n, latent, &mut Rng::new(seed).jumped(EVAL_STREAM + stream))
}

fn checkpoint_meta(cfg: &TrainConfig, hash: &str, step: usize) -> Vec<(&'static str, String)> {
    vec![
        ("config_hash", format!("sha256:{hash}")),
        ("step", step.to_string()),
        ("model", cfg.model.to_string()),
        ("data", cfg.data.to_string()),
        ("feature_dim", cfg.feature_dim.to_string()),
        ("metric", cfg.metric.as_str().to_string()),
        ("seed", cfg.seed.to_string()),
        ("n_modes", cfg.ring.n_modes.to_string()),
        ("radius", format!("{:?}", cfg.ring.radius)),
        ("sigma", format!("{:?}", cfg.ring.sigma)),
    ]
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub jobs: usize,
    pub mnist_dir: Option<PathBuf>,
    /// Log real step times; off by default so metrics files are reproducible bit for bit.
    pub wall_clock: bool,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub config: TrainConfig,
    pub steps: usize,
    pub last: Option<StepRecord>,
    pub outputs: Vec<String>,
}

pub fn resolve_config(config: Option<&Path>, overrides: &Overrides) -> Result<TrainConfig, CliError> {
    match config {
        Some(path) => Ok(parse_config(path, overrides)?),
        None if overrides.preset.is_some() => Ok(parse_config_str("", overrides)?),
        None => Err(CliError::Usage("give --preset or --config".into())),
    }
}

/// Configs for `jobs` replicas: seed `s + j` on stream `stream + j`, each in `out/seed_<s + j>`.
pub fn job_configs(base: &TrainConfig, jobs: usize) -> Vec<TrainConfig> {
    if jobs <= 1 {
        return vec![base.clone()];
    }
    (0..jobs as u64)
        .map(|j| {
            let mut c = base.clone();
            c.seed = base.seed + j;
            c.stream = base.stream + j;
            c.out_dir = base.out_dir.join(format!("seed_{}", c.seed));
            c
        })
        .collect()
}

pub fn cmd_train(opts: &TrainOptions) -> Result<Vec<RunSummary>, CliError> {
    let base = resolve_config(opts.config.as_deref(), &opts.overrides)?;
    let mnist = match base.data {
        DataKind::Mnist => Some(load_mnist_dir(&mnist_dir(opts.mnist_dir.as_deref())?)?),
        DataKind::Ring => None,
    };
    let configs = job_configs(&base, opts.jobs);
    let results: Vec<Result<RunSummary, CliError>> = if configs.len() == 1 {
        vec![train_run(&configs[0], mnist.as_ref(), opts)]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = configs.iter().map(|c| s.spawn(|| train_run(c, mnist.as_ref(), opts))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Failed("training thread panicked".into()))))
                .collect()
        })
    };
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (c, r) in configs.iter().zip(results) {
        match r {
            Ok(s) => ok.push(s),
            Err(e) if configs.len() == 1 => return Err(e),
            Err(e) => errors.push(format!("seed {}: {e}", c.seed)),
        }
    }
    if errors.is_empty() {
        Ok(ok)
    } else {
        Err(CliError::Failed(errors.join("; ")))
    }
}

/// One training run with all of its files.
pub fn train_run(cfg: &TrainConfig, mnist: Option<&MnistData>, opts: &TrainOptions) -> Result<RunSummary, CliError> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let snapshot = to_config_text(cfg);
    let mut manifest = RunManifest::start(snapshot, cfg.seed);
    manifest.write(&dir).map_err(io_err(&dir))?;

    let source: &dyn RealSource = match (cfg.data, mnist) {
        (DataKind::Ring, _) => &cfg.ring,
        (DataKind::Mnist, Some(m)) => m,
        (DataKind::Mnist, None) => return Err(CliError::Usage("MNIST config without MNIST data".into())),
    };
    let metrics_path = dir.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io_err(&metrics_path))?;
    manifest.add_output("metrics.csv");

    let latent = cfg.generator_spec().input_dim();
    let n_eval = match cfg.data {
        DataKind::Ring => RING_EVAL_SAMPLES,
        DataKind::Mnist => MNIST_GRID * MNIST_GRID,
    };
    let z_eval = eval_noise(cfg.seed, cfg.stream, n_eval, latent);
    let mut images: Vec<String> = Vec::new();

    let result = {
        let mut observer = |r: &StepRecord, nets: &GanNetworks| -> Result<(), String> {
            writeln!(metrics, "{}", metrics_row(r, opts.wall_clock)).map_err(|e| format!("metrics.csv: {e}"))?;
            let due = cfg.eval_every > 0 && (r.step % cfg.eval_every == 0 || r.step == cfg.steps);
            if due {
                let name = snapshot_image(cfg, nets, &z_eval, r.step, &dir).map_err(|e| e.to_string())?;
                if !opts.quiet {
                    eprintln!(
                        "[seed {}] step {:>6}  critic {:+.5}  generator {:+.5}  -> {name}",
                        cfg.seed, r.step, r.critic_loss, r.generator_loss
                    );
                }
                images.push(name);
            }
            Ok(())
        };
        train(cfg, source, &mut observer)
    };
    metrics.flush().map_err(io_err(&metrics_path))?;
    drop(metrics);
    for name in images {
        manifest.add_output(name);
    }

    match result {
        Ok(outcome) => {
            let ckpt = outcome.networks.to_checkpoint(&checkpoint_meta(cfg, &manifest.config_hash, cfg.steps));
            write_checkpoint(&dir.join("final.ckpt"), &ckpt)?;
            manifest.add_output("final.ckpt");
            manifest.finish("ok");
            manifest.write(&dir).map_err(io_err(&dir))?;
            Ok(RunSummary {
                dir,
                config: cfg.clone(),
                steps: outcome.records.len(),
                last: outcome.records.last().copied(),
                outputs: manifest.outputs.clone(),
            })
        }
        Err(TrainError::Diverged { step, detail, last_good }) => {
            let ckpt = last_good.to_checkpoint(&checkpoint_meta(cfg, &manifest.config_hash, step - 1));
            write_checkpoint(&dir.join("last_good.ckpt"), &ckpt)?;
            manifest.add_output("last_good.ckpt");
            manifest.finish(format!("diverged at step {step}: {detail}"));
            manifest.write(&dir).map_err(io_err(&dir))?;
            Err(CliError::Failed(format!(
                "training diverged at step {step}: {detail}; partial outputs in {}",
                dir.display()
            )))
        }
        Err(e) => {
            manifest.finish(format!("failed: {e}"));
            manifest.write(&dir).map_err(io_err(&dir))?;
            Err(e.into())
        }
    }
}

/// Ring runs get a density heatmap, MNIST runs a grid of samples.
fn snapshot_image(cfg: &TrainConfig, nets: &GanNetworks, z: &Array2, step: usize, dir: &Path) -> Result<String, CliError> {
    let samples = generate(nets, z)?;
    match cfg.data {
        DataKind::Ring => {
            let name = format!("heatmap_{step}.pgm");
            heatmap(&samples, &HeatmapConfig::default())?.write_pgm(&dir.join(&name))?;
            Ok(name)
        }
        DataKind::Mnist => {
            let name = format!("samples_{step}.pgm");
            let path = dir.join(&name);
            let side = (samples.cols() as f64).sqrt() as usize;
            fs::write(&path, image_grid_pgm(&samples, side, MNIST_GRID)).map_err(io_err(&path))?;
            Ok(name)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub n_samples: usize,
    pub out: PathBuf,
    pub seed: u64,
    /// Feature dimension the caller expects the checkpoint's critic to have.
    pub feature_dim: Option<usize>,
    pub ring: Option<RingSpec>,
    pub classifier: Option<PathBuf>,
    pub mnist_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalSummary {
    Ring(ModeReport),
    Mnist {
        report: tripletgan::evaluation::ClassReport,
        classifier_accuracy: f64,
    },
}

fn meta_parse<T: std::str::FromStr>(ckpt: &tripletgan::models::Checkpoint, key: &str) -> Option<T> {
    ckpt.meta(key).and_then(|v| v.parse().ok())
}

pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalSummary, CliError> {
    let ckpt = read_checkpoint(&opts.checkpoint)?;
    let nets = GanNetworks::from_checkpoint(&ckpt)?;
    if let Some(fd) = opts.feature_dim {
        if nets.feature_dim() != fd {
            return Err(ModelError::FeatureDim {
                network: nets.feature_dim(),
                requested: fd,
            }
            .into());
        }
    }
    let data = match ckpt.meta("data") {
        Some(d) => d.parse::<DataKind>().map_err(|e| CliError::Failed(format!("checkpoint data kind: {e}")))?,
        None if nets.generator_spec.output_dim() == 2 => DataKind::Ring,
        None => DataKind::Mnist,
    };
    if opts.n_samples == 0 {
        return Err(CliError::Usage("--n-samples must be >= 1".into()));
    }
    fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    let z = eval_noise(opts.seed, 0, opts.n_samples, nets.generator_spec.input_dim());
    let samples = generate(&nets, &z)?;
    match data {
        DataKind::Ring => {
            let ring = opts.ring.unwrap_or(RingSpec {
                n_modes: meta_parse(&ckpt, "n_modes").unwrap_or(8),
                radius: meta_parse(&ckpt, "radius").unwrap_or(1.0),
                sigma: meta_parse(&ckpt, "sigma").unwrap_or(0.01),
            });
            let report = mode_report(&samples, &ring, CoverageThresholds::default())?;
            let mut csv = String::from("n_samples,covered_modes,hq_fraction");
            for k in 0..report.per_mode_counts.len() {
                csv.push_str(&format!(",mode_{k}"));
            }
            csv.push_str(&format!("\n{},{},{}", report.n_samples, report.covered_modes, csv_float(report.hq_fraction)));
            for c in &report.per_mode_counts {
                csv.push_str(&format!(",{c}"));
            }
            csv.push('\n');
            let path = opts.out.join("mode_report.csv");
            fs::write(&path, csv).map_err(io_err(&path))?;
            heatmap(&samples, &HeatmapConfig::default())?.write_pgm(&opts.out.join("heatmap.pgm"))?;
            Ok(EvalSummary::Ring(report))
        }
        DataKind::Mnist => {
            let clf = match &opts.classifier {
                Some(p) => Classifier::from_checkpoint(&read_checkpoint(p)?)?,
                None => {
                    let data = load_mnist_dir(&mnist_dir(opts.mnist_dir.as_deref())?)?;
                    let defaults = ClassifierConfig::default();
                    // A sixth of the data, i.e. the default 10000 for full MNIST.
                    let cfg = ClassifierConfig {
                        holdout: defaults.holdout.min(data.len() / 6).max(1),
                        ..defaults
                    };
                    let clf = train_classifier(&data, &cfg)?;
                    write_checkpoint(&opts.out.join("classifier.ckpt"), &clf.to_checkpoint())?;
                    clf
                }
            };
            let accuracy = clf.held_out_accuracy.unwrap_or(0.0);
            if accuracy < MIN_CLASSIFIER_ACCURACY {
                eprintln!("warning: classifier held-out accuracy {accuracy:.4} is below {MIN_CLASSIFIER_ACCURACY}");
            }
            let labels = classify_digits(&clf, &samples)?;
            let report = class_report(&labels)?;
            let mut csv = String::from("n_samples,entropy,l2_to_uniform,classifier_accuracy");
            for k in 0..report.class_counts.len() {
                csv.push_str(&format!(",class_{k}"));
            }
            csv.push_str(&format!(
                "\n{},{},{},{}",
                labels.len(),
                csv_float(report.entropy),
                csv_float(report.l2_to_uniform),
                csv_float(accuracy)
            ));
            for c in &report.class_counts {
                csv.push_str(&format!(",{c}"));
            }
            csv.push('\n');
            let path = opts.out.join("class_report.csv");
            fs::write(&path, csv).map_err(io_err(&path))?;
            let side = (samples.cols() as f64).sqrt() as usize;
            let shown = samples.select_rows(&(0..samples.rows().min(MNIST_GRID * MNIST_GRID)).collect::<Vec<_>>());
            let grid = opts.out.join("samples.pgm");
            fs::write(&grid, image_grid_pgm(&shown, side, MNIST_GRID)).map_err(io_err(&grid))?;
            Ok(EvalSummary::Mnist {
                report,
                classifier_accuracy: accuracy,
            })
        }
    }
}

pub fn cmd_check(opts: &CheckOptions) -> Vec<CheckRow> {
    run_checks(opts)
}
