//! Experiment files shipped with the crate.
//!
//! A scenario is one JSON document: a name, a free-text description,
//! annotations for values that only exist as hardware measurements, and one
//! experiment block (`sweep`, `pattern` or `comet`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beamforming::{ElementModel, PatternReference};
use crate::channel::ChannelConfig;
use crate::comet::InterpolatorModel;
use crate::modem::Modulation;
use crate::sweep::{SweepConfig, SweepError, DEFAULT_FRAMES_PER_POSITION, DEFAULT_SECONDARY_THRESHOLD_DB};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}")]
    Unknown(String),
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario {name} is a {found} experiment, expected {expected}")]
    WrongKind { name: String, found: &'static str, expected: &'static str },
}

/// A reference value that the simulator does not reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub key: String,
    pub value: f64,
    pub unit: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepScenario {
    pub channel: ChannelConfig,
    #[serde(default = "default_frames")]
    pub frames_per_position: usize,
    #[serde(default = "default_modulation")]
    pub modulation: Modulation,
    #[serde(default = "default_threshold")]
    pub secondary_threshold_db: f64,
    /// Expected aligned beam pair, if the geometry makes one obvious.
    #[serde(default)]
    pub aligned_pair: Option<(u8, u8)>,
}

fn default_frames() -> usize {
    DEFAULT_FRAMES_PER_POSITION
}

fn default_modulation() -> Modulation {
    Modulation::Qpsk
}

fn default_threshold() -> f64 {
    DEFAULT_SECONDARY_THRESHOLD_DB
}

impl SweepScenario {
    pub fn to_config(&self, seed: u64) -> Result<SweepConfig, SweepError> {
        let mut channel = self.channel.clone();
        channel.rng_seed = seed;
        let mut cfg = SweepConfig::new(channel, seed)?;
        cfg.frames_per_position = self.frames_per_position;
        cfg.modulation = self.modulation;
        cfg.secondary_threshold_db = self.secondary_threshold_db;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternScenario {
    pub carrier_frequency_hz: f64,
    /// Codebook beams to evaluate; empty means the uniform broadside beam.
    #[serde(default)]
    pub beam_indices: Vec<u8>,
    pub angle_start_deg: f64,
    pub angle_stop_deg: f64,
    pub angle_step_deg: f64,
    #[serde(default)]
    pub element_model: ElementModel,
    pub reference: PatternReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CometScenario {
    pub n_elements: usize,
    pub element_spread_db: f64,
    pub gain_seed: u64,
    pub interpolator: InterpolatorModel,
    #[serde(default = "default_drive")]
    pub drive_amplitude: f64,
    pub phase_step_deg: f64,
    #[serde(default)]
    pub detector_noise_sigma: Option<f64>,
}

fn default_drive() -> f64 {
    0.9
}

impl CometScenario {
    pub fn phase_grid(&self) -> Vec<f64> {
        let n = (360.0 / self.phase_step_deg).round().max(1.0) as usize;
        (0..n).map(|i| i as f64 * self.phase_step_deg).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Sweep(SweepScenario),
    Pattern(PatternScenario),
    Comet(CometScenario),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Sweep(_) => "sweep",
            Experiment::Pattern(_) => "pattern",
            Experiment::Comet(_) => "comet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Config keys whose values were fitted rather than taken from a measurement.
    #[serde(default)]
    pub fitted: Vec<String>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
    pub experiment: Experiment,
}

const BUILTIN: &[(&str, &str)] = &[
    ("tabletop-4p5m", include_str!("../scenarios/tabletop-4p5m.json")),
    ("tabletop-4p5m+cabinet", include_str!("../scenarios/tabletop-4p5m+cabinet.json")),
    ("tabletop-4p5m-tx-45", include_str!("../scenarios/tabletop-4p5m-tx-45.json")),
    ("tabletop-4p5m-tx+45", include_str!("../scenarios/tabletop-4p5m-tx+45.json")),
    ("broadside-pattern", include_str!("../scenarios/broadside-pattern.json")),
    ("codebook-patterns", include_str!("../scenarios/codebook-patterns.json")),
    ("comet-element-gain", include_str!("../scenarios/comet-element-gain.json")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

/// Raw JSON of a built-in scenario.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        builtin_source(name).map(Self::from_json).unwrap_or_else(|| Err(ScenarioError::Unknown(name.into())))
    }

    /// Loads a file if `spec` names one, otherwise a built-in scenario.
    /// A trailing `.json` or `.cfg` is ignored for built-in names.
    pub fn load(spec: &str) -> Result<Self, ScenarioError> {
        let path = Path::new(spec);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: spec.into(), source })?;
            return Self::from_json(&text);
        }
        let stem = path.file_name().and_then(|f| f.to_str()).unwrap_or(spec);
        let stem = stem.strip_suffix(".json").or_else(|| stem.strip_suffix(".cfg")).unwrap_or(stem);
        Self::builtin(stem)
    }

    pub fn annotation(&self, key: &str) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.key == key)
    }

    pub fn sweep(&self) -> Result<&SweepScenario, ScenarioError> {
        match &self.experiment {
            Experiment::Sweep(s) => Ok(s),
            e => Err(self.wrong(e.kind(), "sweep")),
        }
    }

    pub fn pattern(&self) -> Result<&PatternScenario, ScenarioError> {
        match &self.experiment {
            Experiment::Pattern(s) => Ok(s),
            e => Err(self.wrong(e.kind(), "pattern")),
        }
    }

    pub fn comet(&self) -> Result<&CometScenario, ScenarioError> {
        match &self.experiment {
            Experiment::Comet(s) => Ok(s),
            e => Err(self.wrong(e.kind(), "comet")),
        }
    }

    fn wrong(&self, found: &'static str, expected: &'static str) -> ScenarioError {
        ScenarioError::WrongKind { name: self.name.clone(), found, expected }
    }
}
