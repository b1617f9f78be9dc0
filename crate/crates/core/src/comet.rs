//! Code-multiplexed element test.
//!
//! Element `n` is switched on and off by the code `c_n = (1 + w_{a_n}) / 2`
//! where `w_j(t) = (-1)^popcount(j & t)` is a Walsh-Hadamard row. A
//! square-law detector sees
//!
//! ```text
//! P(t) = sum_n |z_n|^2 c_n(t) + 2 sum_{n<m} Re{z_n z_m*} c_n(t) c_m(t)
//! c_n c_m = (1 + w_{a_n} + w_{a_m} + w_{a_n ^ a_m}) / 4
//! ```
//!
//! With every `a_n` and every `a_n ^ a_m` distinct and nonzero, the Walsh
//! coefficient at `a_n ^ a_m` is `Re{z_n z_m*} / 2` and the coefficient at
//! `a_n` is `|z_n|^2 / 2 + sum_{m != n} Re{z_n z_m*} / 2`. Imaginary parts
//! come from extra traces in which one subset of elements is rotated by 90
//! degrees; subset `b` holds the elements whose index has bit `b` set, so
//! every pair is split by at least one trace.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beamforming::{quantize_iq, dequantize, BeamError};
use crate::rng::{derive_seed, gaussian, seeded};

pub const MAX_ELEMENTS: usize = 64;
const MAX_CODE_LEN: usize = 1 << 16;
/// Elements whose power is below this fraction of the strongest are dead.
const DEAD_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CometError {
    #[error("element count {0} outside 1..={MAX_ELEMENTS}")]
    Capacity(usize),
    #[error("{what}: expected {expected}, got {got}")]
    SizeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite gain")]
    NonFinite,
    #[error("code set is not separable: {0}")]
    Singular(String),
    #[error("all elements dead")]
    AllDead,
    #[error(transparent)]
    Beam(#[from] BeamError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSet {
    pub length: usize,
    /// Walsh row index of each element's code.
    pub walsh_rows: Vec<usize>,
    pub codes: Vec<Vec<u8>>,
}

#[inline]
fn walsh(row: usize, t: usize) -> i32 {
    if (row & t).count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Greedy choice of Walsh rows with distinct nonzero rows and pairwise XORs.
fn choose_rows(n: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = Vec::with_capacity(n);
    let mut used: HashSet<usize> = HashSet::new();
    let mut cand = 1;
    while rows.len() < n {
        if !used.contains(&cand) {
            let xors: Vec<usize> = rows.iter().map(|&r| r ^ cand).collect();
            if xors.iter().all(|x| !used.contains(x) && *x != cand) {
                used.insert(cand);
                used.extend(xors);
                rows.push(cand);
            }
        }
        cand += 1;
    }
    rows
}

impl CodeSet {
    pub fn n_elements(&self) -> usize {
        self.codes.len()
    }

    /// Walsh-Hadamard basis in natural order.
    pub fn basis_id(&self) -> String {
        format!("walsh-hadamard-{}", self.length)
    }

    /// Checks that the projections of every code product are separable.
    pub fn verify(&self) -> Result<(), CometError> {
        let mut seen = HashSet::new();
        for &r in &self.walsh_rows {
            if r == 0 || r >= self.length || !seen.insert(r) {
                return Err(CometError::Singular(format!("row {r} repeated, zero or out of range")));
            }
        }
        for (i, &a) in self.walsh_rows.iter().enumerate() {
            for &b in &self.walsh_rows[i + 1..] {
                if !seen.insert(a ^ b) {
                    return Err(CometError::Singular(format!("product of rows {a} and {b} aliases")));
                }
            }
        }
        for (code, &r) in self.codes.iter().zip(&self.walsh_rows) {
            if code.len() != self.length || code.iter().enumerate().any(|(t, &c)| (c as i32) * 2 - 1 != walsh(r, t)) {
                return Err(CometError::Singular(format!("code for row {r} does not match its Walsh row")));
            }
        }
        Ok(())
    }
}

pub fn gen_codes(n_elements: usize) -> Result<CodeSet, CometError> {
    if n_elements == 0 || n_elements > MAX_ELEMENTS {
        return Err(CometError::Capacity(n_elements));
    }
    let rows = choose_rows(n_elements);
    let max_index = rows.iter().copied().max().unwrap_or(1);
    let length = (max_index + 1).next_power_of_two().max(2);
    if length > MAX_CODE_LEN {
        return Err(CometError::Capacity(n_elements));
    }
    let codes = rows
        .iter()
        .map(|&r| (0..length).map(|t| u8::from(walsh(r, t) == 1)).collect())
        .collect();
    let set = CodeSet { length, walsh_rows: rows, codes };
    set.verify()?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrace {
    pub power_samples: Vec<f64>,
}

/// Square-law detector output over one code period.
///
/// With `noise` = `(sigma, seed)` Gaussian noise is added and the result
/// clipped at zero.
pub fn simulate_detector(gains: &[Complex64], codes: &CodeSet, noise: Option<(f64, u64)>) -> Result<DetectorTrace, CometError> {
    if gains.len() != codes.n_elements() {
        return Err(CometError::SizeMismatch { what: "element gains", expected: codes.n_elements(), got: gains.len() });
    }
    if gains.iter().any(|g| !(g.re.is_finite() && g.im.is_finite())) {
        return Err(CometError::NonFinite);
    }
    let mut rng = noise.map(|(_, seed)| seeded(seed));
    let power_samples = (0..codes.length)
        .map(|t| {
            let field: Complex64 = gains.iter().zip(&codes.codes).filter(|(_, c)| c[t] == 1).map(|(g, _)| g).sum();
            let mut p = field.norm_sqr();
            if let (Some((sigma, _)), Some(r)) = (noise, rng.as_mut()) {
                p = (p + gaussian(r, sigma)).max(0.0);
            }
            p
        })
        .collect();
    Ok(DetectorTrace { power_samples })
}

/// In-place fast Walsh-Hadamard transform (natural order), unnormalised.
fn fwht(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Estimates of `z_n z_m*`, Hermitian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelations {
    pub matrix: Vec<Vec<Complex64>>,
}

impl CrossCorrelations {
    pub fn n(&self) -> usize {
        self.matrix.len()
    }

    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.matrix[n][m]
    }
}

/// Element subsets rotated by 90 degrees in the extra traces.
pub fn rotation_sets(n_elements: usize) -> Vec<Vec<usize>> {
    let bits = usize::BITS - (n_elements.max(2) - 1).leading_zeros();
    (0..bits)
        .map(|b| (0..n_elements).filter(|i| (i >> b) & 1 == 1).collect())
        .collect()
}

/// Applies a 90 degree rotation to the elements in `set`.
pub fn rotate_set(gains: &[Complex64], set: &[usize]) -> Vec<Complex64> {
    let mut g = gains.to_vec();
    for &i in set {
        g[i] *= Complex64::i();
    }
    g
}

/// Base trace plus one trace per rotation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CometMeasurement {
    pub base: DetectorTrace,
    pub rotated: Vec<DetectorTrace>,
}

/// Runs every detector trace needed for a full extraction.
pub fn measure(gains: &[Complex64], codes: &CodeSet, noise: Option<(f64, u64)>) -> Result<CometMeasurement, CometError> {
    let with_salt = |salt: u64| noise.map(|(s, seed)| (s, derive_seed(seed, &[salt])));
    let base = simulate_detector(gains, codes, with_salt(0))?;
    let rotated = rotation_sets(gains.len())
        .iter()
        .enumerate()
        .map(|(k, set)| simulate_detector(&rotate_set(gains, set), codes, with_salt(k as u64 + 1)))
        .collect::<Result<_, _>>()?;
    Ok(CometMeasurement { base, rotated })
}

/// Walsh coefficients `(1/L) sum_t P(t) w_j(t)`.
fn coefficients(trace: &DetectorTrace, codes: &CodeSet) -> Result<Vec<f64>, CometError> {
    if trace.power_samples.len() != codes.length {
        return Err(CometError::SizeMismatch { what: "detector trace", expected: codes.length, got: trace.power_samples.len() });
    }
    let mut v = trace.power_samples.clone();
    fwht(&mut v);
    let l = codes.length as f64;
    v.iter_mut().for_each(|x| *x /= l);
    Ok(v)
}

/// Real parts of all pairwise products and the element powers from one trace.
fn real_parts(trace: &DetectorTrace, codes: &CodeSet) -> Result<(Vec<Vec<f64>>, Vec<f64>), CometError> {
    let c = coefficients(trace, codes)?;
    let a = &codes.walsh_rows;
    let n = a.len();
    let mut re = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = 2.0 * c[a[i] ^ a[j]];
            re[i][j] = v;
            re[j][i] = v;
        }
    }
    let power = (0..n).map(|i| 2.0 * c[a[i]] - re[i].iter().sum::<f64>()).collect();
    Ok((re, power))
}

pub fn extract_correlations(meas: &CometMeasurement, codes: &CodeSet) -> Result<CrossCorrelations, CometError> {
    codes.verify()?;
    let n = codes.n_elements();
    let sets = rotation_sets(n);
    if meas.rotated.len() != sets.len() {
        return Err(CometError::SizeMismatch { what: "rotated traces", expected: sets.len(), got: meas.rotated.len() });
    }
    let (re, power) = real_parts(&meas.base, codes)?;
    let mut im = vec![vec![None::<f64>; n]; n];
    for (set, trace) in sets.iter().zip(&meas.rotated) {
        let (re_rot, _) = real_parts(trace, codes)?;
        for i in 0..n {
            for j in 0..n {
                let (si, sj) = (set.contains(&i), set.contains(&j));
                if i == j || si == sj || im[i][j].is_some() {
                    continue;
                }
                // Rotating z_i by j turns Re{z_i z_j*} into -Im{z_i z_j*}.
                im[i][j] = Some(if si { -re_rot[i][j] } else { re_rot[i][j] });
            }
        }
    }
    let matrix = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Complex64::new(power[i].max(0.0), 0.0)
                    } else {
                        Complex64::new(re[i][j], im[i][j].unwrap_or(0.0))
                    }
                })
                .collect()
        })
        .collect();
    Ok(CrossCorrelations { matrix })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedElements {
    pub gains: Vec<Complex64>,
    pub reference: usize,
    pub dead: Vec<usize>,
    pub notes: Vec<String>,
}

fn wrap_pi(x: f64) -> f64 {
    let w = (x + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + std::f64::consts::TAU
    } else {
        w
    }
}

/// Recovers element gains up to a global phase (the reference is real).
pub fn solve_elements(corr: &CrossCorrelations) -> Result<SolvedElements, CometError> {
    let n = corr.n();
    let mags: Vec<f64> = (0..n).map(|i| corr.get(i, i).re.max(0.0).sqrt()).collect();
    let strongest = mags.iter().cloned().fold(0.0, f64::max);
    if !(strongest > 0.0) {
        return Err(CometError::AllDead);
    }
    let dead: Vec<usize> = (0..n).filter(|&i| mags[i] * mags[i] <= DEAD_RATIO * strongest * strongest).collect();
    let mut notes = Vec::new();
    let reference = if dead.contains(&0) {
        let r = (0..n).fold(0, |b, i| if mags[i] > mags[b] { i } else { b });
        notes.push(format!("element 0 dead; element {r} used as phase reference"));
        r
    } else {
        0
    };
    let alive: Vec<usize> = (0..n).filter(|i| !dead.contains(i)).collect();
    let theta0: Vec<f64> = (0..n).map(|i| if i == reference { 0.0 } else { corr.get(i, reference).arg() }).collect();

    // Weighted least squares on phase residuals, reference pinned.
    let unknowns: Vec<usize> = alive.iter().copied().filter(|&i| i != reference).collect();
    let mut theta = theta0.clone();
    if !unknowns.is_empty() {
        let pos = |i: usize| unknowns.iter().position(|&u| u == i);
        let k = unknowns.len();
        let mut a = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        for (x, &i) in alive.iter().enumerate() {
            for &j in &alive[x + 1..] {
                let c = corr.get(i, j);
                let w = c.norm();
                if !(w > 0.0) {
                    continue;
                }
                let r = wrap_pi(c.arg() - (theta0[i] - theta0[j]));
                let (pi, pj) = (pos(i), pos(j));
                if let Some(p) = pi {
                    a[(p, p)] += w;
                    b[p] += w * r;
                }
                if let Some(q) = pj {
                    a[(q, q)] += w;
                    b[q] -= w * r;
                }
                if let (Some(p), Some(q)) = (pi, pj) {
                    a[(p, q)] -= w;
                    a[(q, p)] -= w;
                }
            }
        }
        if let Some(delta) = a.lu().solve(&b) {
            for (p, &i) in unknowns.iter().enumerate() {
                theta[i] += delta[p];
            }
        } else {
            notes.push("phase refinement singular; reference factorisation kept".into());
        }
    }
    let gains = (0..n)
        .map(|i| if dead.contains(&i) { Complex64::default() } else { Complex64::from_polar(mags[i], theta[i]) })
        .collect();
    Ok(SolvedElements { gains, reference, dead, notes })
}

/// Vector-interpolator impairments applied to commanded I/Q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolatorModel {
    /// DAC bits per axis; `None` for an unquantised interpolator.
    pub dac_bits: Option<u8>,
    /// I-axis gain over Q-axis gain, dB.
    pub iq_gain_mismatch_db: f64,
    /// Per-axis transfer `sign(x) |x|^p`; 1 is linear.
    pub transfer_exponent: f64,
}

impl InterpolatorModel {
    pub fn ideal() -> Self {
        InterpolatorModel { dac_bits: None, iq_gain_mismatch_db: 0.0, transfer_exponent: 1.0 }
    }

    /// 6-bit DACs driving amplifiers with an expanding control law.
    pub fn vendor_like() -> Self {
        InterpolatorModel { dac_bits: Some(6), iq_gain_mismatch_db: 0.0, transfer_exponent: 1.5 }
    }

    /// Complex output for a commanded amplitude and phase.
    pub fn response(&self, amplitude: f64, phase_rad: f64) -> Result<Complex64, CometError> {
        let (mut i, mut q) = (amplitude * phase_rad.cos(), amplitude * phase_rad.sin());
        if let Some(bits) = self.dac_bits {
            let code = quantize_iq(i, q, bits)?;
            i = dequantize(code.i_code, bits);
            q = dequantize(code.q_code, bits);
        }
        let shape = |x: f64| x.signum() * x.abs().powf(self.transfer_exponent);
        let g = 10f64.powf(self.iq_gain_mismatch_db / 40.0);
        Ok(Complex64::new(shape(i) * g, shape(q) / g))
    }
}

/// True per-element responses and interpolator used by [`sweep_phase_settings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayModel {
    pub element_gains: Vec<Complex64>,
    pub interpolator: InterpolatorModel,
    pub drive_amplitude: f64,
    /// Detector noise standard deviation and seed.
    #[serde(default)]
    pub detector_noise: Option<(f64, u64)>,
}

impl ArrayModel {
    pub fn uniform(n: usize, interpolator: InterpolatorModel) -> Self {
        ArrayModel {
            element_gains: vec![Complex64::new(1.0, 0.0); n],
            interpolator,
            drive_amplitude: 0.9,
            detector_noise: None,
        }
    }

    /// Element magnitudes spread linearly in dB over `spread_db`, with
    /// seeded random phases.
    pub fn with_spread(n: usize, spread_db: f64, seed: u64, interpolator: InterpolatorModel) -> Self {
        let mut rng = seeded(seed);
        let element_gains = (0..n)
            .map(|i| {
                let db = if n > 1 { -spread_db * i as f64 / (n - 1) as f64 } else { 0.0 };
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                Complex64::from_polar(10f64.powf(db / 20.0), phase)
            })
            .collect();
        ArrayModel { element_gains, interpolator, drive_amplitude: 0.9, detector_noise: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementResponse {
    pub element_id: usize,
    pub commanded_phase: f64,
    pub extracted_gain_db: f64,
    pub extracted_phase_deg: f64,
}

fn run_pipeline(gains: &[Complex64], codes: &CodeSet, noise: Option<(f64, u64)>) -> Result<SolvedElements, CometError> {
    let meas = measure(gains, codes, noise)?;
    solve_elements(&extract_correlations(&meas, codes)?)
}

/// Extracted gain and phase of every element at each commanded phase.
///
/// The reference element is held at 0 degrees while the others are set to
/// the commanded phase; a second pass swaps the roles of elements 0 and 1 so
/// the reference element is characterised as well.
pub fn sweep_phase_settings(model: &ArrayModel, phase_grid_deg: &[f64]) -> Result<Vec<ElementResponse>, CometError> {
    let n = model.element_gains.len();
    let codes = gen_codes(n)?;
    let interp = &model.interpolator;
    let a = model.drive_amplitude;
    let mut out = Vec::with_capacity(n * phase_grid_deg.len());
    for (gi, &phi) in phase_grid_deg.iter().enumerate() {
        let v_phi = interp.response(a, phi.to_radians())?;
        let v_ref = interp.response(a, 0.0)?;
        let noise = |pass: u64| model.detector_noise.map(|(s, seed)| (s, derive_seed(seed, &[gi as u64, pass])));
        let mut row = vec![None; n];
        let passes: &[usize] = if n > 1 { &[0, 1] } else { &[0] };
        for (p, &reference) in passes.iter().enumerate() {
            let gains: Vec<Complex64> = model
                .element_gains
                .iter()
                .enumerate()
                .map(|(i, g)| g * if i == reference { v_ref } else { v_phi })
                .collect();
            let solved = run_pipeline(&gains, &codes, noise(p as u64))?;
            let ref_phase = solved.gains[reference].arg();
            for i in 0..n {
                if i == reference || row[i].is_some() {
                    continue;
                }
                let z = solved.gains[i];
                row[i] = Some(ElementResponse {
                    element_id: i,
                    commanded_phase: phi,
                    extracted_gain_db: 20.0 * z.norm().max(1e-15).log10(),
                    extracted_phase_deg: (z.arg() - ref_phase).to_degrees().rem_euclid(360.0),
                });
            }
        }
        if n == 1 {
            let z = model.element_gains[0] * v_phi;
            row[0] = Some(ElementResponse {
                element_id: 0,
                commanded_phase: phi,
                extracted_gain_db: 20.0 * z.norm().max(1e-15).log10(),
                extracted_phase_deg: 0.0,
            });
        }
        out.extend(row.into_iter().flatten());
    }
    Ok(out)
}

/// `element_id,commanded_phase_deg,gain_db,phase_deg`.
pub fn responses_to_csv(rows: &[ElementResponse]) -> String {
    let mut s = String::from("element_id,commanded_phase_deg,gain_db,phase_deg\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.3},{:.4},{:.4}", r.element_id, r.commanded_phase, r.extracted_gain_db, r.extracted_phase_deg);
    }
    s
}
