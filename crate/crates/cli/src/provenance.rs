//! Config fingerprints carried in artifact headers, checked on read.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use hybrec::fsio::{write_atomic, Header};

use crate::config::PipelineConfig;

pub const HASH_KEY: &str = "config_hash";

/// SHA-256 of the compact JSON form, first 16 hex digits.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(bytes)[..8])
}

pub fn sequences_hash(c: &PipelineConfig) -> String {
    fingerprint(&json!({ "window": c.window, "target_day": c.target_day }))
}

pub fn patterns_hash(c: &PipelineConfig) -> String {
    fingerprint(&json!({
        "window": c.window,
        "target_day": c.target_day,
        "min_support": c.min_support,
        "miner": c.hybrid.miner,
        "per_category": c.hybrid.per_category,
    }))
}

pub fn model_hash(c: &PipelineConfig) -> String {
    fingerprint(&json!({ "als": c.als, "aggregation": c.aggregation, "target_day": c.target_day }))
}

pub fn header(hash: &str) -> Header {
    Header::new().with(HASH_KEY, hash)
}

/// Refuses an input whose recorded hash differs from `expected`.
pub fn check(
    path: &Path,
    header: &Header,
    expected: &str,
    producer: &str,
    force: bool,
) -> Result<()> {
    match header.get(HASH_KEY) {
        Some(h) if h == expected => Ok(()),
        _ if force => Ok(()),
        Some(h) => bail!(
            "{}: config hash {h} does not match current config {expected} (rerun `{producer}` or pass --force)",
            path.display()
        ),
        None => bail!("{}: no {HASH_KEY} header (pass --force to accept)", path.display()),
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".config.json");
    out.with_file_name(name)
}

/// Writes `<out>.config.json` with the resolved config.
pub fn write_sidecar(
    out: &Path,
    command: &str,
    config: &PipelineConfig,
    hash: Option<&str>,
) -> Result<()> {
    let doc = json!({ "command": command, "config_hash": hash, "config": config });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_atomic(&sidecar_path(out), text.as_bytes())?;
    Ok(())
}
