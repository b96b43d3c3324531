//! Regression registry keyed by `(command, config hash)`.
//!
//! Each entry stores the SHA-256 of the artifact bytes. Runs compare against
//! an existing entry; `--bless` writes or replaces it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

pub enum Outcome {
    Match,
    Mismatch { expected: String, actual: String },
    Absent,
    Blessed,
}

fn load(path: &Path) -> Result<BTreeMap<String, Value>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn check(path: &Path, cfg: &RunConfig, artifact: &str, bless: bool) -> Result<Outcome> {
    let key = format!("{}:{}", cfg.command, cfg.hash());
    let digest = hex(&Sha256::digest(artifact.as_bytes())[..]);
    let mut reg = load(path)?;
    if bless {
        let config: BTreeMap<&String, &String> = cfg.entries().collect();
        reg.insert(key, json!({ "command": cfg.command, "config": config, "sha256": digest }));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(&reg)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        return Ok(Outcome::Blessed);
    }
    Ok(match reg.get(&key).and_then(|e| e.get("sha256")).and_then(Value::as_str) {
        None => Outcome::Absent,
        Some(expected) if expected == digest => Outcome::Match,
        Some(expected) => Outcome::Mismatch { expected: expected.to_string(), actual: digest },
    })
}
