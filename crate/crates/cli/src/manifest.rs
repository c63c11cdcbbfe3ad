//! Run manifests: resolved config, input digests and tool version, written
//! beside each command's outputs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const TOOL: &str = "skl";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, root, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 of a file, or of a directory as the digest over its files'
/// relative paths and digests in sorted order. Earlier run manifests inside
/// the directory are skipped.
pub fn digest(path: &Path) -> anyhow::Result<String> {
    if !path.is_dir() {
        return file_digest(path);
    }
    let mut files = Vec::new();
    walk(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        if rel.to_string_lossy().ends_with("manifest.run.json") {
            continue;
        }
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(file_digest(&path.join(&rel))?.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}

pub struct RunManifest {
    command: String,
    config: serde_json::Value,
    inputs: Vec<serde_json::Value>,
    outputs: Vec<String>,
    extra: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            config: cfg.to_json(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(json!({
            "role": role,
            "path": path.display().to_string(),
            "sha256": digest(path)?,
        }));
        Ok(())
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn note(&mut self, key: &str, value: serde_json::Value) {
        self.extra.insert(key.to_string(), value);
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut doc = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        for (k, v) in &self.extra {
            doc[k] = v.clone();
        }
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<path>.manifest.run.json` beside a file output.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.run.json");
    PathBuf::from(s)
}
