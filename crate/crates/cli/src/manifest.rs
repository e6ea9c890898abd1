//! `manifest.txt`: what a run was started with and what it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub const MANIFEST_HEADER: &str = "# tripletgan run manifest";
/// Everything after this line is the config snapshot, readable by `--config`.
pub const MANIFEST_CONFIG_MARKER: &str = "# --- config ---";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub snapshot: String,
    pub seed: u64,
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    /// File names relative to the run directory.
    pub outputs: Vec<String>,
}

/// Hash of `content` as git would name a blob of it, with SHA-256 objects.
pub fn content_hash(content: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content.as_bytes());
    let mut out = String::with_capacity(64);
    for b in h.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(snapshot: String, seed: u64) -> Self {
        Self {
            config_hash: content_hash(&snapshot),
            snapshot,
            seed,
            started_unix: unix_now(),
            finished_unix: None,
            status: "running".into(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, status: impl Into<String>) {
        self.finished_unix = Some(unix_now());
        self.status = status.into();
    }

    pub fn add_output(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
    }

    pub fn to_text(&self) -> String {
        let finished = self.finished_unix.map_or_else(|| "-".to_string(), |t| t.to_string());
        format!(
            "{MANIFEST_HEADER}\n\
             # seed = {}\n\
             # config_hash = sha256:{}\n\
             # started_unix = {}\n\
             # finished_unix = {finished}\n\
             # status = {}\n\
             # outputs = {}\n\
             {MANIFEST_CONFIG_MARKER}\n\
             {}",
            self.seed,
            self.config_hash,
            self.started_unix,
            self.status.replace('\n', " "),
            self.outputs.join(","),
            self.snapshot
        )
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err("not a run manifest".into());
        }
        let mut field = |name: &str| -> Result<String, String> {
            let line = lines.next().ok_or_else(|| format!("manifest ends before '{name}'"))?;
            line.strip_prefix("# ")
                .and_then(|l| l.strip_prefix(name))
                .and_then(|l| l.strip_prefix(" = "))
                .map(str::to_string)
                .ok_or_else(|| format!("expected '{name}', got '{line}'"))
        };
        let seed = field("seed")?.parse().map_err(|e| format!("seed: {e}"))?;
        let config_hash = field("config_hash")?
            .strip_prefix("sha256:")
            .ok_or("config_hash must start with sha256:")?
            .to_string();
        let started_unix = field("started_unix")?.parse().map_err(|e| format!("started_unix: {e}"))?;
        let finished_unix = match field("finished_unix")?.as_str() {
            "-" => None,
            t => Some(t.parse().map_err(|e| format!("finished_unix: {e}"))?),
        };
        let status = field("status")?;
        let outputs = field("outputs")?;
        let outputs = outputs.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
        let marker = format!("\n{MANIFEST_CONFIG_MARKER}\n");
        let at = text.find(&marker).ok_or("manifest has no config block")?;
        Ok(Self {
            snapshot: text[at + marker.len()..].to_string(),
            seed,
            config_hash,
            started_unix,
            finished_unix,
            status,
            outputs,
        })
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::write(dir.join("manifest.txt"), self.to_text())
    }
}
