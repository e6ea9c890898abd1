//! Mode coverage on the Gaussian ring, class balance of generated digits,
//! density heatmaps, and small exact checks of the triplet distance.

mod classifier;
mod theory;

pub use classifier::{classify_digits, train_classifier, Classifier, ClassifierConfig};
pub use theory::{
    antipodal_optimality_check, brute_force_ipm, brute_force_ipm_clipped, ipm_family, ipm_separation, toy_distance_check,
    AntipodalReport, DiscreteDist, IpmResult, PairValue, SeparationReport, ToyCheck, MAX_IPM_ATOMS, MAX_IPM_GRID,
    MIN_TOY_SAMPLES,
};

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Array2;
use crate::sampler::RingSpec;

pub const N_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("expected {expected} columns, got {got}")]
    Columns { expected: usize, got: usize },
    #[error("label {0} is not a digit class")]
    BadLabel(u8),
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("{0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
}

/// Thresholds for counting a ring mode as covered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageThresholds {
    /// Minimum share of samples assigned to the mode.
    pub coverage_frac: f64,
    /// Radius, in units of the mode's sigma, for high-quality samples.
    pub radius_sigmas: f64,
}

impl Default for CoverageThresholds {
    fn default() -> Self {
        Self {
            coverage_frac: 0.01,
            radius_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub n_samples: usize,
    /// Samples assigned to each mode (nearest mean).
    pub per_mode_counts: Vec<usize>,
    pub covered_modes: usize,
    /// Fraction of samples within `radius_sigmas * sigma` of their nearest mean.
    pub hq_fraction: f64,
}

pub const MIN_MODE_SAMPLES: usize = 100;

/// Assigns every sample to its nearest mode mean. A mode is covered when it
/// holds at least `coverage_frac` of the samples and the median distance of
/// those samples to its mean is within the high-quality radius.
pub fn mode_report(samples: &Array2, spec: &RingSpec, thresholds: CoverageThresholds) -> Result<ModeReport, EvalError> {
    if samples.cols() != 2 {
        return Err(EvalError::Columns {
            expected: 2,
            got: samples.cols(),
        });
    }
    if samples.rows() < MIN_MODE_SAMPLES {
        return Err(EvalError::TooFewSamples {
            need: MIN_MODE_SAMPLES,
            got: samples.rows(),
        });
    }
    let means = spec.mode_means();
    let radius = thresholds.radius_sigmas * spec.sigma;
    let mut dists: Vec<Vec<f64>> = vec![Vec::new(); means.len()];
    let mut hq = 0usize;
    for r in 0..samples.rows() {
        let (x, y) = (samples.get(r, 0), samples.get(r, 1));
        let (k, d) = means
            .iter()
            .enumerate()
            .map(|(k, m)| (k, (x - m[0]).hypot(y - m[1])))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        if d <= radius {
            hq += 1;
        }
        dists[k].push(d);
    }
    let n = samples.rows();
    let covered = dists
        .iter_mut()
        .filter(|d| !d.is_empty() && d.len() as f64 >= thresholds.coverage_frac * n as f64)
        .filter_map(|d| (median(d) <= radius).then_some(()))
        .count();
    Ok(ModeReport {
        n_samples: n,
        per_mode_counts: dists.iter().map(Vec::len).collect(),
        covered_modes: covered,
        hq_fraction: hq as f64 / n as f64,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_counts: [usize; N_CLASSES],
    /// Natural-log entropy of the empirical class distribution.
    pub entropy: f64,
    /// Euclidean distance of the class distribution to uniform.
    pub l2_to_uniform: f64,
}

pub fn class_report(labels: &[u8]) -> Result<ClassReport, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::TooFewSamples { need: 1, got: 0 });
    }
    let mut class_counts = [0usize; N_CLASSES];
    for &l in labels {
        *class_counts.get_mut(l as usize).ok_or(EvalError::BadLabel(l))? += 1;
    }
    let n = labels.len() as f64;
    let probs = class_counts.map(|c| c as f64 / n);
    let entropy = -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    let u = 1.0 / N_CLASSES as f64;
    let l2_to_uniform = probs.iter().map(|p| (p - u) * (p - u)).sum::<f64>().sqrt();
    Ok(ClassReport {
        class_counts,
        entropy,
        l2_to_uniform,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapConfig {
    pub lo: f64,
    pub hi: f64,
    pub grid: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            lo: -1.5,
            hi: 1.5,
            grid: 64,
        }
    }
}

/// 2-D histogram of samples as an 8-bit image, `+y` pointing up.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub side: usize,
    /// Row-major counts, row 0 at the top.
    pub counts: Vec<u64>,
    /// `255 * ln(1 + count) / ln(1 + max count)`, rounded.
    pub pixels: Vec<u8>,
    /// Samples outside the bounds.
    pub dropped: usize,
}

impl Heatmap {
    /// `(row, col)` of the cell containing `(x, y)`, if inside the bounds.
    pub fn cell(cfg: &HeatmapConfig, x: f64, y: f64) -> Option<(usize, usize)> {
        let idx = |v: f64| -> Option<usize> {
            if !(v >= cfg.lo && v <= cfg.hi) {
                return None;
            }
            let i = ((v - cfg.lo) / (cfg.hi - cfg.lo) * cfg.grid as f64) as usize;
            Some(i.min(cfg.grid - 1))
        };
        let col = idx(x)?;
        let row = cfg.grid - 1 - idx(y)?;
        Some((row, col))
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.side, self.side).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_pgm()).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn heatmap(samples: &Array2, cfg: &HeatmapConfig) -> Result<Heatmap, EvalError> {
    if samples.cols() != 2 {
        return Err(EvalError::Columns {
            expected: 2,
            got: samples.cols(),
        });
    }
    if !(cfg.hi > cfg.lo) || cfg.grid == 0 {
        return Err(EvalError::Contract(format!("bad heatmap bounds [{}, {}] x {}", cfg.lo, cfg.hi, cfg.grid)));
    }
    let side = cfg.grid;
    let mut counts = vec![0u64; side * side];
    let mut dropped = 0;
    for r in 0..samples.rows() {
        match Heatmap::cell(cfg, samples.get(r, 0), samples.get(r, 1)) {
            Some((row, col)) => counts[row * side + col] += 1,
            None => dropped += 1,
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let pixels = if max == 0 {
        vec![0; counts.len()]
    } else {
        let denom = (max as f64).ln_1p();
        counts.iter().map(|&c| (255.0 * (c as f64).ln_1p() / denom).round() as u8).collect()
    };
    Ok(Heatmap {
        side,
        counts,
        pixels,
        dropped,
    })
}

#[cfg(test)]
mod tests;
