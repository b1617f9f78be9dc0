//! Content-addressed output files.
//!
//! Text artifacts start with `#` metadata lines (tool version, kind, seed,
//! scenario, config) followed by the CSV body. The file name is
//! `<kind>-<seed>-<hash>.<ext>` where `hash` is the first 12 hex digits of the
//! SHA-256 of the complete file contents, so identical runs produce identical
//! names and bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::sweep::{SweepConfig, SweepResult};
use crate::TOOL_VERSION;

pub const HASH_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactMeta {
    pub tool: String,
    pub kind: String,
    pub seed: u64,
    pub scenario: Option<String>,
    pub config: serde_json::Value,
}

impl ArtifactMeta {
    pub fn new(kind: &str, seed: u64, scenario: Option<&str>, config: serde_json::Value) -> Self {
        ArtifactMeta { tool: TOOL_VERSION.to_string(), kind: kind.to_string(), seed, scenario: scenario.map(str::to_string), config }
    }

    pub fn header(&self) -> String {
        let mut h = String::new();
        let _ = writeln!(h, "# tool: {}", self.tool);
        let _ = writeln!(h, "# kind: {}", self.kind);
        let _ = writeln!(h, "# seed: {}", self.seed);
        if let Some(s) = &self.scenario {
            let _ = writeln!(h, "# scenario: {s}");
        }
        let _ = writeln!(h, "# config: {}", self.config);
        h
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    let mut s = hex::encode(Sha256::digest(bytes));
    s.truncate(HASH_DIGITS);
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub file_name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    /// Metadata header followed by a text body.
    pub fn text(meta: &ArtifactMeta, body: &str, ext: &str) -> Self {
        let mut content = meta.header();
        content.push_str(body);
        Self::named(&meta.kind, meta.seed, content.into_bytes(), ext)
    }

    /// Raw bytes; the metadata goes to a sidecar (see [`Artifact::sidecar`]).
    pub fn binary(meta: &ArtifactMeta, bytes: Vec<u8>, ext: &str) -> Self {
        Self::named(&meta.kind, meta.seed, bytes, ext)
    }

    fn named(kind: &str, seed: u64, bytes: Vec<u8>, ext: &str) -> Self {
        let file_name = format!("{kind}-{seed}-{}.{ext}", short_hash(&bytes));
        Artifact { file_name, bytes }
    }

    /// JSON metadata file named after this artifact.
    pub fn sidecar(&self, meta: &ArtifactMeta) -> Artifact {
        let mut bytes = serde_json::to_vec_pretty(meta).expect("metadata serialises");
        bytes.push(b'\n');
        Artifact { file_name: format!("{}.json", self.file_name), bytes }
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(&self.file_name);
        std::fs::write(&path, &self.bytes)?;
        Ok(path)
    }
}

/// Configuration block recorded with a sweep matrix.
pub fn sweep_config_json(cfg: &SweepConfig) -> serde_json::Value {
    serde_json::json!({
        "frames_per_position": cfg.frames_per_position,
        "modulation": cfg.modulation.name(),
        "secondary_threshold_db": cfg.secondary_threshold_db,
        "payload_template": String::from_utf8_lossy(&cfg.payload_template),
        "channel": cfg.channel,
    })
}

/// The SNR matrix of a sweep as a `sweep-<seed>-<hash>.csv` artifact.
pub fn sweep_artifact(scenario: &str, cfg: &SweepConfig, result: &SweepResult) -> Artifact {
    let meta = ArtifactMeta::new("sweep", cfg.seed, Some(scenario), sweep_config_json(cfg));
    Artifact::text(&meta, &result.matrix.to_csv(), "csv")
}

/// Body of a text artifact with the `#` lines removed.
pub fn strip_header(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.find('\n').map_or("", |i| &rest[i + 1..]);
    }
    rest
}
