//! Checkpoint files.
//!
//! A text header of `# key=value` metadata lines and `name rows cols` tensor
//! lines, ended by an empty line, followed by every tensor's entries as
//! little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use super::ModelError;
use crate::autodiff::Array2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Array2)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Array2> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, t: Array2) {
        self.tensors.push((name.into(), t));
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, String> {
        let mut header = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || k.is_empty() || v.contains('\n') {
                return Err(format!("metadata entry '{k}' cannot be stored"));
            }
            header.push_str(&format!("# {k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) || name.starts_with('#') {
                return Err(format!("tensor name '{name}' cannot be stored"));
            }
            header.push_str(&format!("{name} {} {}\n", t.rows(), t.cols()));
        }
        header.push('\n');
        let mut out = header.into_bytes();
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut ckpt = Checkpoint::default();
        let mut shapes = Vec::new();
        let mut pos = 0;
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|e| pos + e)
                .ok_or("header is not terminated by an empty line")?;
            let line = std::str::from_utf8(&bytes[pos..end]).map_err(|_| "header is not UTF-8")?;
            pos = end + 1;
            if line.is_empty() {
                break;
            }
            if let Some(meta) = line.strip_prefix("# ") {
                let (k, v) = meta.split_once('=').ok_or_else(|| format!("bad metadata line '{line}'"))?;
                ckpt.metadata.push((k.to_string(), v.to_string()));
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let parsed = match fields[..] {
                [name, r, c] => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()).map(|(r, c)| (name, r, c)),
                _ => None,
            };
            let (name, r, c) = parsed.ok_or_else(|| format!("bad tensor line '{line}'"))?;
            shapes.push((name.to_string(), r, c));
        }
        let need: usize = shapes.iter().map(|(_, r, c)| r * c * 8).sum();
        let have = bytes.len() - pos;
        if have != need {
            return Err(format!("expected {need} data bytes, found {have}"));
        }
        for (name, r, c) in shapes {
            let data = bytes[pos..pos + r * c * 8]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            pos += r * c * 8;
            ckpt.tensors.push((name, Array2::from_vec(r, c, data).map_err(|e| e.to_string())?));
        }
        Ok(ckpt)
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let bytes = ckpt.to_bytes().map_err(|detail| ModelError::Checkpoint {
        path: path.display().to_string(),
        detail,
    })?;
    fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes).map_err(|detail| ModelError::Checkpoint {
        path: path.display().to_string(),
        detail,
    })
}
