//! Stdout reports, artifact writing and payload input.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde_json::{Map, Value};

use sda_core::artifact::{Artifact, ArtifactMeta};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// `key: value` lines.
    Text,
    /// One JSON object.
    Json,
}

pub struct Output {
    pub dir: PathBuf,
    pub format: Format,
}

/// Ordered key/value report.
#[derive(Default)]
pub struct Report(Vec<(String, Value)>);

impl Report {
    pub fn put(&mut self, key: impl Into<String>, value: impl Into<Value>) -> &mut Self {
        self.0.push((key.into(), value.into()));
        self
    }

    /// Number rounded to `digits` decimals.
    pub fn num(&mut self, key: impl Into<String>, value: f64, digits: i32) -> &mut Self {
        let s = 10f64.powi(digits);
        self.put(key, (value * s).round() / s)
    }
}

fn text_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Output {
    pub fn new(dir: PathBuf, format: Format) -> Self {
        Output { dir, format }
    }

    pub fn emit(&self, report: &Report) -> CliResult {
        self.emit_to(report, false)
    }

    /// Like [`Output::emit`]; `to_stderr` keeps stdout free for data.
    pub fn emit_to(&self, report: &Report, to_stderr: bool) -> CliResult {
        let text = match self.format {
            Format::Text => report.0.iter().map(|(k, v)| format!("{k}: {}\n", text_value(v))).collect::<String>(),
            Format::Json => {
                let m: Map<String, Value> = report.0.iter().cloned().collect();
                format!("{}\n", Value::Object(m))
            }
        };
        let res = if to_stderr { std::io::stderr().lock().write_all(text.as_bytes()) } else { std::io::stdout().lock().write_all(text.as_bytes()) };
        res.map_err(|e| CliError::Io(format!("report: {e}")))
    }

    pub fn write(&self, art: &Artifact) -> CliResult<PathBuf> {
        art.write_to(&self.dir).map_err(|e| CliError::Io(format!("{}: {e}", self.dir.join(&art.file_name).display())))
    }

    pub fn text_artifact(&self, meta: &ArtifactMeta, body: &str) -> CliResult<PathBuf> {
        self.write(&Artifact::text(meta, body, "csv"))
    }

    /// Binary artifact plus its JSON metadata sidecar.
    pub fn binary_artifact(&self, meta: &ArtifactMeta, bytes: Vec<u8>, ext: &str) -> CliResult<PathBuf> {
        let art = Artifact::binary(meta, bytes, ext);
        self.write(&art.sidecar(meta))?;
        self.write(&art)
    }
}

/// Reads a payload file, or stdin for `-`.
pub fn read_payload(spec: &str) -> CliResult<Vec<u8>> {
    if spec == "-" {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(|e| CliError::Io(format!("stdin: {e}")))?;
        return Ok(buf);
    }
    std::fs::read(spec).map_err(|e| CliError::Io(format!("{spec}: {e}")))
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes to a file, or stdout for `-`.
pub fn write_payload(spec: &str, bytes: &[u8]) -> CliResult {
    if spec == "-" {
        return std::io::stdout().lock().write_all(bytes).map_err(|e| CliError::Io(format!("stdout: {e}")));
    }
    std::fs::write(spec, bytes).map_err(|e| CliError::Io(format!("{spec}: {e}")))
}
