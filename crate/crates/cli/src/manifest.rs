//! Run manifests: what was run, on which inputs, producing which outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use chrono::{SecondsFormat, Utc};
use sha2::{Digest, Sha256};
use vbid_core::config::KeyValues;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Writes `text` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

pub struct RunManifest {
    command: String,
    seed: u64,
    config_sha256: String,
    started: String,
    clock: Instant,
    inputs: Vec<PathBuf>,
}

impl RunManifest {
    /// `config_text` is the effective configuration in canonical form.
    pub fn start(command: &str, seed: u64, config_text: &str) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config_sha256: sha256_text(config_text),
            started: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            clock: Instant::now(),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes the manifest to `path`. Output paths are recorded relative to
    /// the manifest's directory.
    pub fn finish(self, path: &Path, outputs: &[PathBuf]) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut kv = KeyValues::default();
        kv.insert("command", &self.command);
        kv.insert("tool_version", env!("CARGO_PKG_VERSION"));
        kv.insert("seed", self.seed);
        kv.insert("config_sha256", &self.config_sha256);
        kv.insert("started", &self.started);
        kv.insert("wall_seconds", format!("{:.3}", self.clock.elapsed().as_secs_f64()));
        for (k, p) in self.inputs.iter().enumerate() {
            let abs = fs::canonicalize(p).unwrap_or_else(|_| p.clone());
            kv.insert(&format!("input.{k}.path"), abs.display());
            kv.insert(&format!("input.{k}.sha256"), sha256_file(p)?);
        }
        for (k, p) in outputs.iter().enumerate() {
            let rel = p.strip_prefix(base).unwrap_or(p);
            kv.insert(&format!("output.{k}.path"), rel.display());
            kv.insert(&format!("output.{k}.sha256"), sha256_file(p)?);
        }
        write_atomic(path, &kv.to_text())
    }
}

/// Recomputes every digest in the manifest at `path`. Returns the number
/// of files checked.
pub fn verify(path: &Path) -> Result<usize> {
    let kv = KeyValues::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut checked = 0;
    for kind in ["input", "output"] {
        for k in 0.. {
            let Some(file) = kv.get_str(&format!("{kind}.{k}.path")) else {
                break;
            };
            let expected = kv
                .get_str(&format!("{kind}.{k}.sha256"))
                .with_context(|| format!("{kind}.{k} has no digest"))?;
            let file = base.join(file);
            let actual = sha256_file(&file)?;
            if actual != expected {
                bail!("digest mismatch for {}: manifest {expected}, file {actual}", file.display());
            }
            checked += 1;
        }
    }
    Ok(checked)
}
