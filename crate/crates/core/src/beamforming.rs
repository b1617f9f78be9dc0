//! Beam synthesis for the 8x2 phased array.
//!
//! Elements are indexed row-major: element `k` sits in azimuth column
//! `k % n_azimuth` and elevation row `k / n_azimuth`. Only the azimuth axis is
//! steered; the far field is evaluated in the horizontal plane (elevation 0),
//! where the identical elevation rows add coherently.
//!
//! The array factor is
//!
//! ```text
//! AF(theta) = sum_k A_k * exp(j * (2*pi * col(k) * d * sin(theta) - phi_k))
//! ```
//!
//! with `d` the element spacing in wavelengths. A steering weight therefore
//! uses `phi_k = 2*pi * col(k) * d * sin(theta_0)`.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SPEED_OF_LIGHT;

/// Lowest tunable carrier (Hz).
pub const BAND_MIN_HZ: f64 = 24.0e9;
/// Highest tunable carrier (Hz).
pub const BAND_MAX_HZ: f64 = 29.5e9;
/// The element pitch is half a wavelength at this frequency.
pub const SPACING_DESIGN_HZ: f64 = 29.5e9;
/// Peak gain reported by an absolute pattern of the uniform broadside beam.
pub const ARRAY_PEAK_GAIN_DBI: f64 = 14.0;
pub const DEFAULT_DAC_BITS: u8 = 6;
pub const PATTERN_FLOOR_DB: f64 = -100.0;
/// Steering beyond this angle is rejected.
pub const MAX_SYNTHESIS_ANGLE_DEG: f64 = 60.0;

pub const CODEBOOK_SIZE: usize = 21;
pub const CODEBOOK_STEP_DEG: f64 = 4.5;
pub const CODEBOOK_FIRST_DEG: f64 = -45.0;
/// Beam index of the broadside (0 degree) codebook entry.
pub const BROADSIDE_INDEX: u8 = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeamError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("steering angle {0} deg outside +/-60 deg synthesis range")]
    AngleOutOfRange(f64),
    #[error("awv has {got} weights, array has {expected} elements")]
    SizeMismatch { expected: usize, got: usize },
    #[error("awv has no active element")]
    AllZero,
    #[error("amplitude must be finite and non-negative, got {0}")]
    InvalidAmplitude(f64),
    #[error("DAC width {0} outside 2..=12 bits")]
    InvalidBits(u8),
    #[error("empty angle grid")]
    EmptyGrid,
    #[error("angle grid must be strictly increasing within [-90, 90] deg")]
    InvalidGrid,
    #[error("no -3 dB crossing inside the grid")]
    NoCrossing,
    #[error("beam index {0} out of range 1..21")]
    InvalidBeamIndex(i64),
}

/// Planar array layout at a given carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    /// Element pitch in wavelengths at `carrier_frequency`.
    pub element_spacing: f64,
    pub carrier_frequency: f64,
}

impl ArrayGeometry {
    /// The 8x2 evaluation-kit layout: half-wavelength pitch at 29.5 GHz,
    /// expressed in wavelengths at `carrier_hz`.
    pub fn evk(carrier_hz: f64) -> Self {
        Self {
            n_azimuth: 8,
            n_elevation: 2,
            element_spacing: 0.5 * carrier_hz / SPACING_DESIGN_HZ,
            carrier_frequency: carrier_hz,
        }
    }

    /// A geometry with an explicit pitch (in wavelengths at the carrier).
    pub fn with_spacing(n_azimuth: usize, n_elevation: usize, spacing: f64, carrier_hz: f64) -> Self {
        Self {
            n_azimuth,
            n_elevation,
            element_spacing: spacing,
            carrier_frequency: carrier_hz,
        }
    }

    pub fn validate(&self) -> Result<(), BeamError> {
        if self.n_azimuth == 0 || self.n_elevation == 0 {
            return Err(BeamError::InvalidGeometry("element counts must be >= 1".into()));
        }
        if !(self.element_spacing.is_finite() && self.element_spacing > 0.0) {
            return Err(BeamError::InvalidGeometry(format!(
                "element spacing {} must be > 0",
                self.element_spacing
            )));
        }
        if !(BAND_MIN_HZ..=BAND_MAX_HZ).contains(&self.carrier_frequency) {
            return Err(BeamError::InvalidGeometry(format!(
                "carrier {} Hz outside 24-29.5 GHz",
                self.carrier_frequency
            )));
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.n_azimuth * self.n_elevation
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Azimuth column of element `k`.
    #[inline]
    pub fn column(&self, k: usize) -> usize {
        k % self.n_azimuth
    }

    /// Gain of a single element (dBi) implied by anchoring the uniform
    /// broadside beam at [`ARRAY_PEAK_GAIN_DBI`].
    pub fn element_gain_dbi(&self) -> f64 {
        ARRAY_PEAK_GAIN_DBI - 20.0 * (self.n_elements() as f64).log10()
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::evk(28.0e9)
    }
}

/// In-phase / quadrature pair.
pub fn weight_to_iq(amplitude: f64, phase: f64) -> (f64, f64) {
    (amplitude * phase.cos(), amplitude * phase.sin())
}

/// Inverse of [`weight_to_iq`]; phase wrapped to `[0, 2*pi)`.
pub fn iq_to_weight(i: f64, q: f64) -> (f64, f64) {
    (i.hypot(q), wrap_phase(q.atan2(i)))
}

/// Wraps an angle in radians to `[0, 2*pi)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(TAU);
    if p >= TAU {
        0.0
    } else {
        p
    }
}

/// Result of quantising one I/Q pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedIq {
    pub i_code: i32,
    pub q_code: i32,
    /// Set when either input lay outside `[-1, 1]` and was clipped.
    pub saturated: bool,
}

fn check_bits(bits: u8) -> Result<(), BeamError> {
    if (2..=12).contains(&bits) {
        Ok(())
    } else {
        Err(BeamError::InvalidBits(bits))
    }
}

/// Width of one quantiser step on `[-1, 1]`.
pub fn lsb(bits: u8) -> f64 {
    2.0 / f64::from(1u32 << bits)
}

/// Mid-rise quantiser: code `c` in `-2^(b-1) ..= 2^(b-1)-1` represents the
/// level `(c + 1/2) * lsb`. Ties go away from zero; an exact zero maps to the
/// positive level.
fn quantize_axis(x: f64, bits: u8) -> (i32, bool) {
    let half = 1i32 << (bits - 1);
    let saturated = !(-1.0..=1.0).contains(&x);
    let t = x / lsb(bits);
    let m = if t >= 0.0 { t.floor() } else { t.ceil() - 1.0 };
    let m = m.clamp(-(half as f64), (half - 1) as f64) as i32;
    (m, saturated)
}

pub fn quantize_iq(i: f64, q: f64, bits: u8) -> Result<QuantizedIq, BeamError> {
    check_bits(bits)?;
    let (i_code, si) = quantize_axis(i, bits);
    let (q_code, sq) = quantize_axis(q, bits);
    Ok(QuantizedIq {
        i_code,
        q_code,
        saturated: si || sq,
    })
}

/// Level represented by a quantiser code.
pub fn dequantize(code: i32, bits: u8) -> f64 {
    (f64::from(code) + 0.5) * lsb(bits)
}

/// One element of an analog weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementWeight {
    pub amplitude: f64,
    /// Radians in `[0, 2*pi)`.
    pub phase: f64,
    pub i_code: i32,
    pub q_code: i32,
}

impl ElementWeight {
    pub fn new(amplitude: f64, phase: f64, bits: u8) -> Result<Self, BeamError> {
        check_bits(bits)?;
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(BeamError::InvalidAmplitude(amplitude));
        }
        let phase = wrap_phase(phase);
        let (i, q) = weight_to_iq(amplitude, phase);
        let codes = quantize_iq(i, q, bits)?;
        Ok(Self {
            amplitude,
            phase,
            i_code: codes.i_code,
            q_code: codes.q_code,
        })
    }

    /// `A * exp(j*phi)` from the commanded amplitude and phase.
    pub fn ideal(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }

    /// The response realised by the quantised I/Q codes.
    pub fn quantized(&self, bits: u8) -> Complex64 {
        Complex64::new(dequantize(self.i_code, bits), dequantize(self.q_code, bits))
    }

    pub fn is_active(&self) -> bool {
        self.amplitude > 0.0
    }
}

/// Analog weight vector: one [`ElementWeight`] per array element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Awv {
    pub weights: Vec<ElementWeight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub dac_bits: u8,
}

impl Awv {
    pub fn new(weights: Vec<ElementWeight>, dac_bits: u8) -> Result<Self, BeamError> {
        check_bits(dac_bits)?;
        if !weights.iter().any(ElementWeight::is_active) {
            return Err(BeamError::AllZero);
        }
        Ok(Self {
            weights,
            label: None,
            dac_bits,
        })
    }

    /// Builds a weight vector from `(amplitude, phase_rad)` pairs.
    pub fn from_polar(pairs: &[(f64, f64)], dac_bits: u8) -> Result<Self, BeamError> {
        let weights = pairs
            .iter()
            .map(|&(a, p)| ElementWeight::new(a, p, dac_bits))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(weights, dac_bits)
    }

    /// Equal amplitudes, zero phase.
    pub fn broadside(n_elements: usize) -> Self {
        let pairs = vec![(1.0, 0.0); n_elements];
        Self::from_polar(&pairs, DEFAULT_DAC_BITS).expect("uniform weights are valid")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn active_elements(&self) -> usize {
        self.weights.iter().filter(|w| w.is_active()).count()
    }

    pub fn ideal_weights(&self) -> Vec<Complex64> {
        self.weights.iter().map(ElementWeight::ideal).collect()
    }

    pub fn quantized_weights(&self) -> Vec<Complex64> {
        self.weights.iter().map(|w| w.quantized(self.dac_bits)).collect()
    }

    pub fn total_amplitude(&self) -> f64 {
        self.weights.iter().map(|w| w.amplitude).sum()
    }

    fn check(&self, geometry: &ArrayGeometry) -> Result<(), BeamError> {
        if self.weights.len() != geometry.n_elements() {
            return Err(BeamError::SizeMismatch {
                expected: geometry.n_elements(),
                got: self.weights.len(),
            });
        }
        Ok(())
    }
}

/// Uniform-amplitude weight vector steered to `angle_deg` in azimuth.
pub fn make_steering_awv(angle_deg: f64, geometry: &ArrayGeometry) -> Result<Awv, BeamError> {
    geometry.validate()?;
    if !angle_deg.is_finite() || angle_deg.abs() > MAX_SYNTHESIS_ANGLE_DEG {
        return Err(BeamError::AngleOutOfRange(angle_deg));
    }
    let step = TAU * geometry.element_spacing * angle_deg.to_radians().sin();
    let pairs: Vec<(f64, f64)> = (0..geometry.n_elements())
        .map(|k| (1.0, step * geometry.column(k) as f64))
        .collect();
    Awv::from_polar(&pairs, DEFAULT_DAC_BITS)
}

/// Complex array factor at azimuth `angle_deg` (elevation 0).
pub fn array_factor(awv: &Awv, geometry: &ArrayGeometry, angle_deg: f64) -> Result<Complex64, BeamError> {
    awv.check(geometry)?;
    Ok(array_factor_unchecked(awv, geometry, angle_deg))
}

fn array_factor_unchecked(awv: &Awv, geometry: &ArrayGeometry, angle_deg: f64) -> Complex64 {
    let kd = TAU * geometry.element_spacing * angle_deg.to_radians().sin();
    awv.weights
        .iter()
        .enumerate()
        .map(|(k, w)| Complex64::from_polar(w.amplitude, kd * geometry.column(k) as f64 - w.phase))
        .sum()
}

/// Radiation pattern of a single element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementModel {
    Isotropic,
    /// Field proportional to `cos(theta)`, zero behind the array.
    #[default]
    Cosine,
}

impl ElementModel {
    pub fn field(&self, angle_deg: f64) -> f64 {
        match self {
            ElementModel::Isotropic => 1.0,
            ElementModel::Cosine => angle_deg.to_radians().cos().max(0.0),
        }
    }
}

/// Far-field pattern in absolute units: `AF * E * sqrt(G_element)`, so that
/// `|F|^2` is the gain relative to isotropic.
pub fn field_pattern(
    awv: &Awv,
    geometry: &ArrayGeometry,
    element: ElementModel,
    angle_deg: f64,
) -> Result<Complex64, BeamError> {
    let af = array_factor(awv, geometry, angle_deg)?;
    let g = 10f64.powf(geometry.element_gain_dbi() / 20.0);
    Ok(af * element.field(angle_deg) * g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternReference {
    /// dBi, anchored so the uniform broadside beam peaks at 14 dBi.
    AbsoluteDbi,
    /// dB relative to this pattern's own peak.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub angles_deg: Vec<f64>,
    pub gains_db: Vec<f64>,
    pub reference: PatternReference,
}

impl Pattern {
    /// Two-column CSV (`angle_deg,gain_db`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_deg,gain_db\n");
        for (a, g) in self.angles_deg.iter().zip(&self.gains_db) {
            let _ = writeln!(out, "{a:.3},{g:.2}");
        }
        out
    }

    pub fn peak(&self) -> (f64, f64) {
        let i = argmax(&self.gains_db);
        (self.angles_deg[i], self.gains_db[i])
    }
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn angle_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

pub fn compute_pattern(
    awv: &Awv,
    geometry: &ArrayGeometry,
    grid: &[f64],
    element: ElementModel,
    reference: PatternReference,
) -> Result<Pattern, BeamError> {
    geometry.validate()?;
    awv.check(geometry)?;
    if grid.is_empty() {
        return Err(BeamError::EmptyGrid);
    }
    let ordered = grid.windows(2).all(|w| w[1] > w[0]);
    let in_range = grid.iter().all(|a| a.is_finite() && a.abs() <= 90.0);
    if !ordered || !in_range {
        return Err(BeamError::InvalidGrid);
    }
    let offset = geometry.element_gain_dbi();
    let mut gains: Vec<f64> = grid
        .iter()
        .map(|&a| {
            let p = (array_factor_unchecked(awv, geometry, a) * element.field(a)).norm_sqr();
            10.0 * p.log10() + offset
        })
        .collect();
    if reference == PatternReference::Normalized {
        let peak = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        gains.iter_mut().for_each(|g| *g -= peak);
    }
    gains
        .iter_mut()
        .for_each(|g| *g = if g.is_finite() { g.max(PATTERN_FLOOR_DB) } else { PATTERN_FLOOR_DB });
    Ok(Pattern {
        angles_deg: grid.to_vec(),
        gains_db: gains,
        reference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternMetrics {
    pub peak_angle: f64,
    pub peak_db: f64,
    /// Half-power beamwidth (degrees).
    pub hpbw: f64,
    /// Peak minus the deeper of the two nulls bounding the main lobe.
    pub peak_to_null_db: f64,
    /// Highest lobe outside the main lobe, relative to the peak. `None` when
    /// the grid holds no side lobe.
    pub first_sidelobe_db: Option<f64>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Angle where the gain crosses `level` between grid points `a` (above) and `b`.
fn crossing(angles: &[f64], gains: &[f64], a: usize, b: usize, level: f64) -> f64 {
    let t = (gains[a] - level) / (gains[a] - gains[b]);
    angles[a] + t * (angles[b] - angles[a])
}

pub fn pattern_metrics(pattern: &Pattern) -> Result<PatternMetrics, BeamError> {
    let g = &pattern.gains_db;
    let a = &pattern.angles_deg;
    if g.is_empty() || g.len() != a.len() {
        return Err(BeamError::EmptyGrid);
    }
    let ip = argmax(g);
    let peak = g[ip];
    let level = peak - 3.0;

    let left = (0..ip).rev().find(|&i| g[i] < level).ok_or(BeamError::NoCrossing)?;
    let right = (ip + 1..g.len()).find(|&i| g[i] < level).ok_or(BeamError::NoCrossing)?;
    let hpbw = crossing(a, g, right - 1, right, level) - crossing(a, g, left + 1, left, level);

    // Main lobe extends down to the first local minimum on either side.
    let mut null_l = ip;
    while null_l > 0 && g[null_l - 1] <= g[null_l] {
        null_l -= 1;
    }
    let mut null_r = ip;
    while null_r + 1 < g.len() && g[null_r + 1] <= g[null_r] {
        null_r += 1;
    }
    let peak_to_null_db = peak - g[null_l].min(g[null_r]);

    let is_local_max = |i: usize| i > 0 && i + 1 < g.len() && g[i] > g[i - 1] && g[i] >= g[i + 1];
    let first_sidelobe_db = (1..g.len().saturating_sub(1))
        .filter(|&i| (i < null_l || i > null_r) && is_local_max(i))
        .map(|i| g[i] - peak)
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |m| m.max(x))));

    Ok(PatternMetrics {
        peak_angle: a[ip],
        peak_db: peak,
        hpbw,
        peak_to_null_db,
        first_sidelobe_db,
    })
}

/// Nominal steering angle of a codebook beam index (1..=21).
pub fn codebook_angle(beam_index: u8) -> Result<f64, BeamError> {
    if !(1..=CODEBOOK_SIZE as u8).contains(&beam_index) {
        return Err(BeamError::InvalidBeamIndex(i64::from(beam_index)));
    }
    Ok(CODEBOOK_FIRST_DEG + CODEBOOK_STEP_DEG * f64::from(beam_index - 1))
}

/// Codebook index whose nominal angle is closest to `angle_deg`, clamped to the scan range.
pub fn nearest_beam_index(angle_deg: f64) -> u8 {
    let k = ((angle_deg - CODEBOOK_FIRST_DEG) / CODEBOOK_STEP_DEG).round();
    (k.clamp(0.0, (CODEBOOK_SIZE - 1) as f64) as u8) + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub beam_index: u8,
    pub steering_angle: f64,
    pub awv: Awv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub geometry: ArrayGeometry,
    pub entries: Vec<CodebookEntry>,
}

impl Codebook {
    pub fn entry(&self, beam_index: u8) -> Result<&CodebookEntry, BeamError> {
        self.entries
            .iter()
            .find(|e| e.beam_index == beam_index)
            .ok_or(BeamError::InvalidBeamIndex(i64::from(beam_index)))
    }

    pub fn awv(&self, beam_index: u8) -> Result<&Awv, BeamError> {
        self.entry(beam_index).map(|e| &e.awv)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `beam_index,angle_deg,e0_i,e0_q,...` with one row per beam.
    pub fn to_csv(&self) -> String {
        let n = self.geometry.n_elements();
        let mut out = String::from("beam_index,angle_deg");
        for k in 0..n {
            let _ = write!(out, ",e{k}_i,e{k}_q");
        }
        out.push('\n');
        for e in &self.entries {
            let _ = write!(out, "{},{:.2}", e.beam_index, e.steering_angle);
            for w in &e.awv.weights {
                let _ = write!(out, ",{},{}", w.i_code, w.q_code);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("codebook serialises")
    }
}

/// The 21 steering beams from -45 to +45 degrees in 4.5 degree steps.
pub fn build_codebook(geometry: &ArrayGeometry) -> Result<Codebook, BeamError> {
    geometry.validate()?;
    let entries = (1..=CODEBOOK_SIZE as u8)
        .map(|idx| {
            let angle = codebook_angle(idx)?;
            let mut awv = make_steering_awv(angle, geometry)?;
            awv.label = Some(idx);
            Ok(CodebookEntry {
                beam_index: idx,
                steering_angle: angle,
                awv,
            })
        })
        .collect::<Result<Vec<_>, BeamError>>()?;
    Ok(Codebook {
        geometry: *geometry,
        entries,
    })
}

/// Phase difference between adjacent azimuth columns of a steering vector.
pub fn steering_phase_step(angle_deg: f64, geometry: &ArrayGeometry) -> f64 {
    TAU * geometry.element_spacing * angle_deg.to_radians().sin()
}
