//! Link budget and PPDU throughput.
//!
//! The budget is solved in the dB domain:
//!
//! ```text
//! EIRP + G_r - FSPL(R) - L_a = P_sens + P_LM
//! FSPL(R) = 20 log10(4 pi R / lambda)
//! P_sens  = -174 dBm/Hz + 10 log10(B) + NF + SNR_req
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SPEED_OF_LIGHT;

/// Thermal noise density at 290 K.
pub const THERMAL_FLOOR_DBM_HZ: f64 = -174.0;

/// Required SNR that closes the 32 dBm EIRP / 20 dB margin budget at 128 m
/// with a 14 dBi receive array, 6 dB noise figure and 1.2 GHz bandwidth.
pub const DEFAULT_REQUIRED_SNR_DB: f64 = -0.33;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkBudgetError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("budget infeasible: {excess_db:.2} dB excess at 1 m")]
    Infeasible { excess_db: f64 },
    #[error("unsupported modulation order {0} (expected 2, 4, 16 or 64)")]
    UnsupportedModulation(u32),
    #[error("invalid rate parameters: {0}")]
    InvalidRate(String),
}

fn positive(name: &'static str, value: f64) -> Result<f64, LinkBudgetError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(LinkBudgetError::NonPositive { name, value })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<f64, LinkBudgetError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(LinkBudgetError::Negative { name, value })
    }
}

pub fn wavelength(frequency_hz: f64) -> f64 {
    SPEED_OF_LIGHT / frequency_hz
}

/// Free-space path loss in dB.
pub fn fspl(range_m: f64, wavelength_m: f64) -> Result<f64, LinkBudgetError> {
    let r = positive("range", range_m)?;
    let l = positive("wavelength", wavelength_m)?;
    Ok(20.0 * (4.0 * PI * r / l).log10())
}

/// Thermal-noise-limited sensitivity in dBm.
pub fn sensitivity(noise_figure_db: f64, bandwidth_hz: f64, required_snr_db: f64) -> Result<f64, LinkBudgetError> {
    Ok(noise_floor(bandwidth_hz, noise_figure_db)? + required_snr_db)
}

fn noise_floor(bandwidth_hz: f64, noise_figure_db: f64) -> Result<f64, LinkBudgetError> {
    let b = positive("bandwidth", bandwidth_hz)?;
    Ok(THERMAL_FLOOR_DBM_HZ + 10.0 * b.log10() + noise_figure_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetParams {
    pub eirp_dbm: f64,
    pub rx_gain_dbi: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
    pub required_snr_db: f64,
    pub link_margin_db: f64,
    /// Total atmospheric loss (dB).
    pub atmospheric_loss_db: f64,
    pub carrier_frequency_hz: f64,
}

impl Default for LinkBudgetParams {
    fn default() -> Self {
        Self {
            eirp_dbm: 32.0,
            rx_gain_dbi: 14.0,
            noise_figure_db: 6.0,
            bandwidth_hz: 1.2e9,
            required_snr_db: DEFAULT_REQUIRED_SNR_DB,
            link_margin_db: 20.0,
            atmospheric_loss_db: 0.0,
            carrier_frequency_hz: 28.0e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetResult {
    pub range_m: f64,
    pub fspl_db: f64,
    pub noise_floor_dbm: f64,
    pub sensitivity_dbm: f64,
}

/// Largest range at which the budget still closes with the configured margin.
pub fn solve_range(p: &LinkBudgetParams) -> Result<LinkBudgetResult, LinkBudgetError> {
    non_negative("link margin", p.link_margin_db)?;
    non_negative("atmospheric loss", p.atmospheric_loss_db)?;
    let lambda = wavelength(positive("carrier frequency", p.carrier_frequency_hz)?);
    let floor = noise_floor(p.bandwidth_hz, p.noise_figure_db)?;
    let sens = floor + p.required_snr_db;
    // Path loss the budget can absorb.
    let allowed = p.eirp_dbm + p.rx_gain_dbi - p.atmospheric_loss_db - sens - p.link_margin_db;
    let excess_at_1m = allowed - fspl(1.0, lambda)?;
    if excess_at_1m < 0.0 {
        return Err(LinkBudgetError::Infeasible { excess_db: excess_at_1m });
    }
    let range_m = lambda / (4.0 * PI) * 10f64.powf(allowed / 20.0);
    Ok(LinkBudgetResult {
        range_m,
        fspl_db: allowed,
        noise_floor_dbm: floor,
        sensitivity_dbm: sens,
    })
}

/// Residual of the budget equation at a given range (dB); zero at the solved range.
pub fn budget_residual(p: &LinkBudgetParams, range_m: f64) -> Result<f64, LinkBudgetError> {
    let lambda = wavelength(positive("carrier frequency", p.carrier_frequency_hz)?);
    let sens = sensitivity(p.noise_figure_db, p.bandwidth_hz, p.required_snr_db)?;
    Ok(p.eirp_dbm + p.rx_gain_dbi - fspl(range_m, lambda)? - p.atmospheric_loss_db - sens - p.link_margin_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub n_data_subcarriers: u32,
    pub modulation_order: u32,
    pub symbol_duration_s: f64,
    pub code_rate: f64,
    pub crc_len_bits: u32,
    pub codeword_len_bits: u32,
}

impl RateParams {
    /// PPDU numerology: 128 data tones, 256-point IDFT + 64 CP at 1.536 GS/s,
    /// rate-1/2 polar code with 128-bit codewords and CRC-8.
    pub fn ppdu(modulation_order: u32) -> Self {
        Self {
            n_data_subcarriers: 128,
            modulation_order,
            symbol_duration_s: symbol_duration(256, 64, SAMPLE_RATE_HZ),
            code_rate: 0.5,
            crc_len_bits: 8,
            codeword_len_bits: 128,
        }
    }
}

pub const SAMPLE_RATE_HZ: f64 = 1.536e9;

/// OFDM symbol duration including the cyclic prefix.
pub fn symbol_duration(idft_size: usize, cp_len: usize, sample_rate_hz: f64) -> f64 {
    (idft_size + cp_len) as f64 / sample_rate_hz
}

/// Occupied signal bandwidth: `f_s * (active + dc) / idft`.
pub fn signal_bandwidth(sample_rate_hz: f64, n_active: usize, n_dc: usize, idft_size: usize) -> f64 {
    sample_rate_hz * (n_active + n_dc) as f64 / idft_size as f64
}

/// Net payload rate `N_sub * log2(M) / T_sym * (r_code - L_crc / L_codeword)`.
pub fn data_rate(p: &RateParams) -> Result<f64, LinkBudgetError> {
    let bits = match p.modulation_order {
        2 => 1.0,
        4 => 2.0,
        16 => 4.0,
        64 => 6.0,
        m => return Err(LinkBudgetError::UnsupportedModulation(m)),
    };
    positive("symbol duration", p.symbol_duration_s)?;
    if p.codeword_len_bits == 0 {
        return Err(LinkBudgetError::InvalidRate("codeword length is zero".into()));
    }
    let overhead = f64::from(p.crc_len_bits) / f64::from(p.codeword_len_bits);
    if p.code_rate < overhead || p.code_rate > 1.0 {
        return Err(LinkBudgetError::InvalidRate(format!(
            "code rate {} below CRC overhead {overhead}",
            p.code_rate
        )));
    }
    Ok(f64::from(p.n_data_subcarriers) * bits / p.symbol_duration_s * (p.code_rate - overhead))
}

/// Budget report for the CLI: dB values at 0.01 dB.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkBudgetReport {
    pub params: LinkBudgetParams,
    pub result: LinkBudgetResult,
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl LinkBudgetReport {
    pub fn new(params: LinkBudgetParams) -> Result<Self, LinkBudgetError> {
        let result = solve_range(&params)?;
        Ok(Self { params, result })
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let r = &self.result;
        let mut s = String::new();
        let _ = writeln!(s, "eirp_dbm: {:.2}", p.eirp_dbm);
        let _ = writeln!(s, "rx_gain_dbi: {:.2}", p.rx_gain_dbi);
        let _ = writeln!(s, "noise_figure_db: {:.2}", p.noise_figure_db);
        let _ = writeln!(s, "bandwidth_hz: {}", p.bandwidth_hz);
        let _ = writeln!(s, "required_snr_db: {:.2}", p.required_snr_db);
        let _ = writeln!(s, "link_margin_db: {:.2}", p.link_margin_db);
        let _ = writeln!(s, "atmospheric_loss_db: {:.2}", p.atmospheric_loss_db);
        let _ = writeln!(s, "carrier_frequency_hz: {}", p.carrier_frequency_hz);
        let _ = writeln!(s, "noise_floor_dbm: {:.2}", r.noise_floor_dbm);
        let _ = writeln!(s, "sensitivity_dbm: {:.2}", r.sensitivity_dbm);
        let _ = writeln!(s, "fspl_db: {:.2}", r.fspl_db);
        let _ = writeln!(s, "range_m: {:.2}", r.range_m);
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let p = &self.params;
        let r = &self.result;
        serde_json::json!({
            "params": {
                "eirp_dbm": r2(p.eirp_dbm),
                "rx_gain_dbi": r2(p.rx_gain_dbi),
                "noise_figure_db": r2(p.noise_figure_db),
                "bandwidth_hz": p.bandwidth_hz,
                "required_snr_db": r2(p.required_snr_db),
                "link_margin_db": r2(p.link_margin_db),
                "atmospheric_loss_db": r2(p.atmospheric_loss_db),
                "carrier_frequency_hz": p.carrier_frequency_hz,
            },
            "result": {
                "range_m": r2(r.range_m),
                "fspl_db": r2(r.fspl_db),
                "noise_floor_dbm": r2(r.noise_floor_dbm),
                "sensitivity_dbm": r2(r.sensitivity_dbm),
            }
        })
    }
}
