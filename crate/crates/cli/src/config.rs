//! Sectioned `key = value` run configuration.
//!
//! ```text
//! [train]
//! preset = ring-triplet   # optional base; every other key overrides it
//! steps = 8000
//!
//! [model]
//! feature_dim = 16
//! ```
//!
//! Without a preset every key is required. [`to_config_text`] writes the
//! canonical form, which parses back to the same config.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use tripletgan::trainer::{TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error(transparent)]
    Invalid(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const TRAIN_KEYS: [&str; 13] = [
    "model",
    "steps",
    "batch",
    "lr_g",
    "lr_c",
    "beta1",
    "beta2",
    "eps_adam",
    "c",
    "seed",
    "stream",
    "eval_every",
    "out_dir",
];
const MODEL_KEYS: [&str; 2] = ["feature_dim", "metric"];
const DATA_KEYS: [&str; 4] = ["kind", "n_modes", "radius", "sigma"];

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    match section {
        "train" => Some(&TRAIN_KEYS),
        "model" => Some(&MODEL_KEYS),
        "data" => Some(&DATA_KEYS),
        _ => None,
    }
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

/// Values that change a parsed config after the file, e.g. from flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub metric: Option<tripletgan::sphere::SphereMetric>,
}

pub fn preset(name: &str) -> Result<TrainConfig, ConfigError> {
    TrainConfig::preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}

/// Reads a config file (or the config block of a run manifest) and applies `overrides`.
pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<TrainConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<TrainConfig, ConfigError> {
    let (entries, file_preset) = scan(text)?;
    let base_name = overrides.preset.as_deref().or(file_preset.as_ref().map(|(p, _)| p.as_str()));
    let mut cfg = match base_name {
        Some(name) => preset(name)?,
        None => {
            let last_line = text.lines().count().max(1);
            for (section, keys) in [("train", &TRAIN_KEYS[..]), ("model", &MODEL_KEYS), ("data", &DATA_KEYS)] {
                for key in keys {
                    if !entries.iter().any(|e| e.section == section && e.key == *key) {
                        return Err(ConfigError::Line {
                            line: last_line,
                            msg: format!("missing required key '{key}' in [{section}] (no preset given)"),
                        });
                    }
                }
            }
            preset("ring-triplet")?
        }
    };
    for e in &entries {
        apply(&mut cfg, e)?;
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = overrides.steps {
        cfg.steps = steps;
    }
    if let Some(out) = &overrides.out_dir {
        cfg.out_dir = out.clone();
    }
    if let Some(metric) = overrides.metric {
        cfg.metric = metric;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Splits the text into entries and pulls out an optional `preset` key.
fn scan(text: &str) -> Result<(Vec<Entry>, Option<(String, usize)>), ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    let mut file_preset = None;
    let mut section: Option<String> = None;
    // Manifest header lines are comments, so a manifest parses as its config.
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| ConfigError::Line { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(format!("malformed section header '{content}'")))?
                .trim();
            if section_keys(name).is_none() {
                return Err(err(format!("unknown section [{name}]; expected [train], [model] or [data]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = section.as_deref() else {
            return Err(err(format!("key '{key}' appears before any section header")));
        };
        if sec == "train" && key == "preset" {
            file_preset = Some((value.to_string(), line));
            continue;
        }
        if !section_keys(sec).is_some_and(|keys| keys.contains(&key)) {
            return Err(err(format!("unknown key '{key}' in [{sec}]")));
        }
        if let Some(prev) = entries.iter().find(|e| e.section == sec && e.key == key) {
            return Err(err(format!("duplicate key '{key}' (first set on line {})", prev.line)));
        }
        entries.push(Entry {
            section: sec.to_string(),
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    if let Some((name, line)) = &file_preset {
        if TrainConfig::preset(name).is_none() {
            return Err(ConfigError::Line {
                line: *line,
                msg: format!("unknown preset '{name}'"),
            });
        }
    }
    Ok((entries, file_preset))
}

fn parse_value<T: FromStr>(e: &Entry, expects: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    e.value.parse().map_err(|err| ConfigError::Line {
        line: e.line,
        msg: format!("{} expects {expects}, got '{}' ({err})", e.key, e.value),
    })
}

fn apply(cfg: &mut TrainConfig, e: &Entry) -> Result<(), ConfigError> {
    const UINT: &str = "an unsigned integer";
    const REAL: &str = "a number";
    match (e.section.as_str(), e.key.as_str()) {
        ("train", "model") => cfg.model = parse_value(e, "triplet or vanilla")?,
        ("train", "steps") => cfg.steps = parse_value(e, UINT)?,
        ("train", "batch") => cfg.batch = parse_value(e, UINT)?,
        ("train", "lr_g") => cfg.lr_g = parse_value(e, REAL)?,
        ("train", "lr_c") => cfg.lr_c = parse_value(e, REAL)?,
        ("train", "beta1") => cfg.beta1 = parse_value(e, REAL)?,
        ("train", "beta2") => cfg.beta2 = parse_value(e, REAL)?,
        ("train", "eps_adam") => cfg.eps_adam = parse_value(e, REAL)?,
        ("train", "c") => cfg.c = parse_value(e, REAL)?,
        ("train", "seed") => cfg.seed = parse_value(e, UINT)?,
        ("train", "stream") => cfg.stream = parse_value(e, UINT)?,
        ("train", "eval_every") => cfg.eval_every = parse_value(e, UINT)?,
        ("train", "out_dir") => cfg.out_dir = PathBuf::from(&e.value),
        ("model", "feature_dim") => cfg.feature_dim = parse_value(e, UINT)?,
        ("model", "metric") => cfg.metric = parse_value(e, "arc or chord")?,
        ("data", "kind") => cfg.data = parse_value(e, "ring or mnist")?,
        ("data", "n_modes") => cfg.ring.n_modes = parse_value(e, UINT)?,
        ("data", "radius") => cfg.ring.radius = parse_value(e, REAL)?,
        ("data", "sigma") => cfg.ring.sigma = parse_value(e, REAL)?,
        _ => unreachable!("keys are checked while scanning"),
    }
    Ok(())
}

/// Canonical text of `cfg`: every key, fixed order, shortest round-tripping floats.
pub fn to_config_text(cfg: &TrainConfig) -> String {
    format!(
        "[train]\n\
         model = {}\n\
         steps = {}\n\
         batch = {}\n\
         lr_g = {:?}\n\
         lr_c = {:?}\n\
         beta1 = {:?}\n\
         beta2 = {:?}\n\
         eps_adam = {:?}\n\
         c = {:?}\n\
         seed = {}\n\
         stream = {}\n\
         eval_every = {}\n\
         out_dir = {}\n\
         \n\
         [model]\n\
         feature_dim = {}\n\
         metric = {}\n\
         \n\
         [data]\n\
         kind = {}\n\
         n_modes = {}\n\
         radius = {:?}\n\
         sigma = {:?}\n",
        cfg.model,
        cfg.steps,
        cfg.batch,
        cfg.lr_g,
        cfg.lr_c,
        cfg.beta1,
        cfg.beta2,
        cfg.eps_adam,
        cfg.c,
        cfg.seed,
        cfg.stream,
        cfg.eval_every,
        cfg.out_dir.display(),
        cfg.feature_dim,
        cfg.metric.as_str(),
        cfg.data,
        cfg.ring.n_modes,
        cfg.ring.radius,
        cfg.ring.sigma,
    )
}
