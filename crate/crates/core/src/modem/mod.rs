//! OFDM PPDU modem.
//!
//! Frame layout (one OFDM symbol = CP + IDFT body):
//!
//! ```text
//! | sync | preamble CE | header | chest x F | payload x <=16 | chest x F | payload ... |
//! ```
//!
//! The sync symbol occupies only even active tones so its body repeats with a
//! period of half an IDFT. The preamble CE symbol and every chest symbol carry
//! the full-band ±1 reference. Header and payload symbols carry data on 128
//! tones and the reference value on 64 interleaved pilot tones.

pub mod crc;
pub mod ofdm;
pub mod padding;
pub mod polar;
pub mod qam;
pub mod rx;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crc::{append_crc, check_crc, crc8};
pub use ofdm::{build_ppdu, Frame, HeaderRecord, Modem, SymbolKind, ToneLayout};
pub use padding::{pad_payload, plan_padding, unpad_payload, PaddingPlan};
pub use polar::{polar_decode, polar_encode};
pub use qam::{demap_llr, map_symbols, Modulation};
pub use rx::{demod_decode, estimate_channel, synchronize, track_cpe, DecodeReport, SnrEstimate, SyncResult};

/// Largest payload accepted by [`build_ppdu`].
pub const MAX_PAYLOAD_BITS: usize = 1 << 20;

#[derive(Debug, Error, Clone)]
pub enum ModemError {
    #[error("{what}: expected length {expected}, got {got}")]
    InvalidLength { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{bits} bits not divisible into {per_symbol}-bit symbols")]
    NotDivisible { bits: usize, per_symbol: usize },
    #[error("unknown modulation '{0}' (expected bpsk, qpsk, 16qam or 64qam)")]
    UnknownModulation(String),
    #[error("invalid PPDU config: {0}")]
    InvalidConfig(String),
    #[error("payload of {bits} bits exceeds the {max}-bit limit")]
    PayloadTooLarge { bits: usize, max: usize },
    #[error("empty sample buffer")]
    EmptyBuffer,
    #[error("preamble not found (peak metric {peak_metric:.3})")]
    SyncNotFound { peak_metric: f64 },
    #[error("header CRC check failed")]
    HeaderCrc { report: Box<DecodeReport> },
    #[error("frame truncated: need {needed} samples, have {available}")]
    Truncated { needed: usize, available: usize },
}

/// Waveform numerology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpduConfig {
    pub idft_size: usize,
    pub cp_len: usize,
    pub n_active_tones: usize,
    pub n_dc_null: usize,
    pub n_data_tones: usize,
    pub n_pilot_tones: usize,
    pub sample_rate_hz: f64,
    pub chest_interval_symbols: usize,
    /// Channel-estimation symbols per chest field.
    pub chest_field_symbols: usize,
    pub modulation: Modulation,
    pub codeword_len: usize,
    pub code_rate: f64,
    pub crc_len: usize,
}

impl Default for PpduConfig {
    fn default() -> Self {
        PpduConfig {
            idft_size: 256,
            cp_len: 64,
            n_active_tones: 192,
            n_dc_null: 8,
            n_data_tones: 128,
            n_pilot_tones: 64,
            sample_rate_hz: crate::linkbudget::SAMPLE_RATE_HZ,
            chest_interval_symbols: 16,
            chest_field_symbols: 2,
            modulation: Modulation::Qpsk,
            codeword_len: polar::CODEWORD_LEN,
            code_rate: 0.5,
            crc_len: crc::CRC_LEN,
        }
    }
}

impl PpduConfig {
    pub fn with_modulation(modulation: Modulation) -> Self {
        PpduConfig { modulation, ..Self::default() }
    }

    pub fn symbol_len(&self) -> usize {
        self.idft_size + self.cp_len
    }

    pub fn validate(&self) -> Result<(), ModemError> {
        let bad = |m: String| Err(ModemError::InvalidConfig(m));
        if !self.idft_size.is_power_of_two() || self.idft_size < 8 {
            return bad(format!("idft_size {} must be a power of two >= 8", self.idft_size));
        }
        if self.cp_len >= self.idft_size {
            return bad(format!("cp_len {} must be shorter than the IDFT", self.cp_len));
        }
        if self.n_active_tones + self.n_dc_null > self.idft_size {
            return bad("active + DC null tones exceed the IDFT size".into());
        }
        if self.n_data_tones + self.n_pilot_tones != self.n_active_tones {
            return bad("data + pilot tones must equal active tones".into());
        }
        if self.n_active_tones % 6 != 0 || self.n_pilot_tones * 3 != self.n_active_tones {
            return bad("pilots must be every third active tone, symmetric around DC".into());
        }
        if self.n_dc_null % 2 != 0 {
            return bad("DC null count must be even".into());
        }
        if self.n_data_tones != polar::CODEWORD_LEN {
            return bad(format!("header needs exactly {} data tones", polar::CODEWORD_LEN));
        }
        if self.codeword_len != polar::CODEWORD_LEN || self.crc_len != crc::CRC_LEN || self.code_rate != 0.5 {
            return bad("only the rate-1/2, 128-bit polar code with CRC-8 is supported".into());
        }
        if self.chest_interval_symbols == 0 || self.chest_field_symbols == 0 {
            return bad("chest interval and field length must be >= 1".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad("sample rate must be positive".into());
        }
        Ok(())
    }
}

/// Where a sample buffer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Tx,
    Rx,
    Channel,
}

impl Origin {
    pub fn code(self) -> u8 {
        match self {
            Origin::Tx => 0,
            Origin::Rx => 1,
            Origin::Channel => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Origin::Tx),
            1 => Some(Origin::Rx),
            2 => Some(Origin::Channel),
            _ => None,
        }
    }
}

/// Complex baseband samples at a declared rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub origin: Origin,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64, origin: Origin) -> Self {
        IqBuffer { samples, sample_rate_hz, origin }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn validate(&self) -> Result<(), ModemError> {
        if self.samples.is_empty() {
            return Err(ModemError::EmptyBuffer);
        }
        if self.samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(ModemError::NonFinite("sample buffer"));
        }
        Ok(())
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Bytes to bits, MSB first.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect()
}

/// Bits to bytes, MSB first. A trailing partial byte is zero-filled.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i))))
        .collect()
}

pub(crate) fn push_uint(out: &mut Vec<u8>, value: u64, width: usize) {
    for i in (0..width).rev() {
        out.push(((value >> i) & 1) as u8);
    }
}

pub(crate) fn read_uint(bits: &[u8]) -> u64 {
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | (b & 1) as u64)
}

/// Adds complex white noise so that a unit-energy tone sees `snr_db`.
///
/// With the orthonormal DFT used here the per-sample noise variance equals the
/// per-tone noise variance, so this sets the post-FFT SNR directly.
pub fn add_awgn(iq: &IqBuffer, snr_db: f64, seed: u64) -> IqBuffer {
    let mut rng = crate::rng::seeded(seed);
    let var = 10f64.powf(-snr_db / 10.0);
    let samples = iq
        .samples
        .iter()
        .map(|&s| s + crate::rng::complex_gaussian(&mut rng, var))
        .collect();
    IqBuffer::new(samples, iq.sample_rate_hz, Origin::Channel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_helpers_round_trip() {
        let bytes = b"SDA\x00\xff";
        let bits = bytes_to_bits(bytes);
        assert_eq!(bits.len(), 40);
        assert_eq!(&bits[..8], &[0, 1, 0, 1, 0, 0, 1, 1]);
        assert_eq!(bits_to_bytes(&bits), bytes.to_vec());
        let mut v = Vec::new();
        push_uint(&mut v, 0x5A5, 12);
        assert_eq!(read_uint(&v), 0x5A5);
    }

    #[test]
    fn default_config_is_valid() {
        let c = PpduConfig::default();
        c.validate().unwrap();
        assert_eq!(c.symbol_len(), 320);
        let bad = PpduConfig { n_pilot_tones: 60, ..c };
        assert!(bad.validate().is_err());
    }
}
