//! Exhaustive TX x RX beam sweep.
//!
//! For every (tx, rx) pair of the two 21-beam codebooks the transmitter sends
//! `frames_per_position` PPDUs whose payload starts with a marker byte and the
//! TX beam index. The receiver decodes the index from the payload, so the
//! measurement lands in the matrix row announced over the air. Rows are TX
//! beams, columns are RX beams, both 1-based.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beamforming::{build_codebook, Codebook, BeamError, CODEBOOK_SIZE};
use crate::channel::{Channel, ChannelConfig, ChannelError};
use crate::modem::{bits_to_bytes, bytes_to_bits, IqBuffer, Modem, ModemError, Modulation, PpduConfig};
use crate::rng::derive_seed;
use crate::{db_to_lin, lin_to_db};

/// First payload byte of every sweep frame.
pub const SWEEP_MARKER: u8 = 0xB5;
pub const DEFAULT_FRAMES_PER_POSITION: usize = 3;
pub const DEFAULT_SECONDARY_THRESHOLD_DB: f64 = 15.0;
pub const DEFAULT_PAYLOAD: &[u8] = b"SDA beam sweep";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error("no cell decoded successfully")]
    NoDecodedCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub tx_codebook: Codebook,
    pub rx_codebook: Codebook,
    pub frames_per_position: usize,
    pub channel: ChannelConfig,
    pub modulation: Modulation,
    pub payload_template: Vec<u8>,
    pub seed: u64,
    pub secondary_threshold_db: f64,
}

impl SweepConfig {
    pub fn new(channel: ChannelConfig, seed: u64) -> Result<Self, SweepError> {
        let cb = build_codebook(&channel.geometry())?;
        Ok(SweepConfig {
            tx_codebook: cb.clone(),
            rx_codebook: cb,
            frames_per_position: DEFAULT_FRAMES_PER_POSITION,
            channel,
            modulation: Modulation::Qpsk,
            payload_template: DEFAULT_PAYLOAD.to_vec(),
            seed,
            secondary_threshold_db: DEFAULT_SECONDARY_THRESHOLD_DB,
        })
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.tx_codebook.len() != CODEBOOK_SIZE || self.rx_codebook.len() != CODEBOOK_SIZE {
            return Err(SweepError::InvalidConfig(format!("codebooks must have {CODEBOOK_SIZE} entries")));
        }
        if self.frames_per_position == 0 {
            return Err(SweepError::InvalidConfig("frames_per_position must be >= 1".into()));
        }
        if !(self.secondary_threshold_db.is_finite() && self.secondary_threshold_db > 0.0) {
            return Err(SweepError::InvalidConfig("secondary threshold must be > 0 dB".into()));
        }
        if self.payload_template.len() > 4096 {
            return Err(SweepError::InvalidConfig("payload template longer than 4096 bytes".into()));
        }
        self.channel.validate()?;
        Ok(())
    }
}

/// 21x21 SNR grid, rows TX beam, columns RX beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrMatrix {
    pub values_db: Vec<Vec<f64>>,
    pub decode_ok: Vec<Vec<bool>>,
}

impl SnrMatrix {
    pub fn new(n: usize) -> Self {
        SnrMatrix { values_db: vec![vec![f64::NAN; n]; n], decode_ok: vec![vec![false; n]; n] }
    }

    pub fn size(&self) -> usize {
        self.values_db.len()
    }

    /// Value at 1-based indices.
    pub fn get(&self, tx: u8, rx: u8) -> f64 {
        self.values_db[tx as usize - 1][rx as usize - 1]
    }

    pub fn ok(&self, tx: u8, rx: u8) -> bool {
        self.decode_ok[tx as usize - 1][rx as usize - 1]
    }

    pub fn min(&self) -> f64 {
        self.values_db.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Header row of RX indices, then one row per TX beam, 0.01 dB precision.
    pub fn to_csv(&self) -> String {
        let n = self.size();
        let mut out = (1..=n).map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in &self.values_db {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub tx: u8,
    pub rx: u8,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub matrix: SnrMatrix,
    pub best_pair: (u8, u8),
    pub best_snr_db: f64,
    pub secondary_peaks: Vec<Peak>,
    pub cells_visited: usize,
    /// Cells whose decoded TX index differed from the schedule.
    pub misplaced_cells: usize,
}

impl SweepResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "best_pair": { "tx": self.best_pair.0, "rx": self.best_pair.1 },
            "best_snr_db": (self.best_snr_db * 100.0).round() / 100.0,
            "secondary_peaks": self.secondary_peaks.iter().map(|p| serde_json::json!({
                "tx": p.tx, "rx": p.rx, "snr_db": (p.snr_db * 100.0).round() / 100.0
            })).collect::<Vec<_>>(),
            "cells_visited": self.cells_visited,
            "decoded_cells": self.matrix.decode_ok.iter().flatten().filter(|&&b| b).count(),
            "matrix_min_db": (self.matrix.min() * 100.0).round() / 100.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    schedule_tx: u8,
    rx: u8,
    decoded_tx: Option<u8>,
    snr_db: f64,
    ok: bool,
}

fn sweep_payload(template: &[u8], tx: u8) -> Vec<u8> {
    let mut p = vec![SWEEP_MARKER, tx];
    p.extend_from_slice(template);
    bytes_to_bits(&p)
}

fn announced_index(bits: &[u8]) -> Option<u8> {
    let bytes = bits_to_bytes(bits);
    match bytes.as_slice() {
        [SWEEP_MARKER, idx, ..] if (1..=CODEBOOK_SIZE as u8).contains(idx) => Some(*idx),
        _ => None,
    }
}

struct Engine<'a> {
    cfg: &'a SweepConfig,
    modem: Modem,
    channel: Channel,
    frames: Vec<IqBuffer>,
}

impl Engine<'_> {
    fn measure(&self, t: u8, r: u8) -> Result<Cell, SweepError> {
        let tx_awv = self.cfg.tx_codebook.awv(t)?;
        let rx_awv = self.cfg.rx_codebook.awv(r)?;
        let mut lin = 0.0;
        let mut all_ok = true;
        let mut decoded = None;
        for f in 0..self.cfg.frames_per_position {
            let seed = derive_seed(self.cfg.seed, &[t as u64, r as u64, f as u64]);
            let rx = self.channel.propagate_seeded(&self.frames[t as usize - 1], tx_awv, rx_awv, seed)?;
            let (snr, idx) = match self.modem.decode(&rx) {
                Ok(rep) if rep.payload_ok() => (rep.snr_db, announced_index(&rep.payload_bits)),
                _ => (self.modem.measure_snr(&rx)?.snr_db, None),
            };
            lin += db_to_lin(snr);
            match idx {
                Some(i) => decoded = decoded.or(Some(i)),
                None => all_ok = false,
            }
        }
        let snr_db = lin_to_db(lin / self.cfg.frames_per_position as f64);
        Ok(Cell { schedule_tx: t, rx: r, decoded_tx: decoded, snr_db, ok: all_ok && decoded.is_some() })
    }
}

/// Runs the sweep in parallel.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult, SweepError> {
    run_sweep_with(cfg, Schedule::Parallel, None)
}

/// Runs the sweep; `progress` is called with the number of finished cells.
pub fn run_sweep_with(
    cfg: &SweepConfig,
    schedule: Schedule,
    progress: Option<&(dyn Fn(usize) + Sync)>,
) -> Result<SweepResult, SweepError> {
    cfg.validate()?;
    let modem = Modem::new(&PpduConfig::with_modulation(cfg.modulation))?;
    let channel = Channel::new(&cfg.channel)?;
    let frames = cfg
        .tx_codebook
        .entries
        .iter()
        .map(|e| modem.build(&sweep_payload(&cfg.payload_template, e.beam_index)).map(|(iq, _)| iq))
        .collect::<Result<Vec<_>, _>>()?;
    let engine = Engine { cfg, modem, channel, frames };
    let pairs: Vec<(u8, u8)> = cfg
        .tx_codebook
        .entries
        .iter()
        .flat_map(|t| cfg.rx_codebook.entries.iter().map(move |r| (t.beam_index, r.beam_index)))
        .collect();
    let done = AtomicUsize::new(0);
    let run = |&(t, r): &(u8, u8)| {
        let c = engine.measure(t, r);
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        if let Some(p) = progress {
            p(n);
        }
        c
    };
    let cells: Vec<Cell> = match schedule {
        Schedule::Parallel => pairs.par_iter().map(run).collect::<Result<_, _>>()?,
        Schedule::Sequential => pairs.iter().map(run).collect::<Result<_, _>>()?,
    };

    let n = CODEBOOK_SIZE;
    let mut matrix = SnrMatrix::new(n);
    let mut misplaced = 0;
    for c in &cells {
        let tx = c.decoded_tx.unwrap_or(c.schedule_tx);
        if tx != c.schedule_tx {
            misplaced += 1;
        }
        let (i, j) = (tx as usize - 1, c.rx as usize - 1);
        matrix.values_db[i][j] = c.snr_db;
        matrix.decode_ok[i][j] = c.ok;
    }
    for c in &cells {
        let (i, j) = (c.schedule_tx as usize - 1, c.rx as usize - 1);
        if matrix.values_db[i][j].is_nan() {
            matrix.values_db[i][j] = c.snr_db;
        }
    }
    let best_pair = select_best(&matrix)?;
    let secondary_peaks = detect_secondary_peaks(&matrix, cfg.secondary_threshold_db);
    Ok(SweepResult {
        best_snr_db: matrix.get(best_pair.0, best_pair.1),
        matrix,
        best_pair,
        secondary_peaks,
        cells_visited: cells.len(),
        misplaced_cells: misplaced,
    })
}

/// Argmax over decoded cells; ties go to the lowest (tx, rx).
pub fn select_best(matrix: &SnrMatrix) -> Result<(u8, u8), SweepError> {
    let mut best: Option<(usize, usize)> = None;
    for i in 0..matrix.size() {
        for j in 0..matrix.size() {
            if !matrix.decode_ok[i][j] {
                continue;
            }
            if best.is_none_or(|(bi, bj)| matrix.values_db[i][j] > matrix.values_db[bi][bj]) {
                best = Some((i, j));
            }
        }
    }
    best.map(|(i, j)| (i as u8 + 1, j as u8 + 1)).ok_or(SweepError::NoDecodedCell)
}

/// Local maxima within `threshold_db` of the best pair that are not
/// sidelobe echoes of it.
///
/// Cells in the best pair's 8-neighbourhood and cells sharing its TX row or
/// RX column are excluded: along those lines one beam stays aligned with the
/// dominant path and the other beam's sidelobes produce local maxima that do
/// not correspond to a separate path. Returns an empty list if no cell decoded.
pub fn detect_secondary_peaks(matrix: &SnrMatrix, threshold_db: f64) -> Vec<Peak> {
    let Ok((bt, br)) = select_best(matrix) else {
        return Vec::new();
    };
    let (bi, bj) = (bt as usize - 1, br as usize - 1);
    let floor = matrix.values_db[bi][bj] - threshold_db;
    let n = matrix.size();
    let v = &matrix.values_db;
    let mut peaks = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == bi || j == bj || (i.abs_diff(bi) <= 1 && j.abs_diff(bj) <= 1) {
                continue;
            }
            let x = v[i][j];
            if !(x > floor) {
                continue;
            }
            let is_max = (i.saturating_sub(1)..=(i + 1).min(n - 1))
                .flat_map(|a| (j.saturating_sub(1)..=(j + 1).min(n - 1)).map(move |b| (a, b)))
                .filter(|&(a, b)| (a, b) != (i, j))
                .all(|(a, b)| x > v[a][b] || (x == v[a][b] && (i, j) < (a, b)));
            if is_max {
                peaks.push(Peak { tx: i as u8 + 1, rx: j as u8 + 1, snr_db: x });
            }
        }
    }
    peaks
}
