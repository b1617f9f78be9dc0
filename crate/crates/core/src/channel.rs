//! Geometric complex-baseband channel between two array nodes in the
//! horizontal plane.
//!
//! Angles are measured counter-clockwise: a node's heading is the bearing of
//! its boresight from the +x axis, and a departure or arrival angle is the
//! bearing of the other end relative to that boresight, wrapped to
//! (-180, 180]. Each path contributes
//!
//! ```text
//! g = F_tx(aod) * F_rx(aoa) * lambda / (4 pi R) * exp(-j 2 pi R / lambda) * 10^(-loss/20)
//! ```
//!
//! delayed by `R / c` rounded to the nearest sample. Signal samples are
//! scaled so that a unit-energy tone at the transmitter corresponds to
//! `tx_tone_power_dbm`; noise is expressed in the same units.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beamforming::{self, ArrayGeometry, Awv, BeamError, Codebook, ElementModel};
use crate::modem::{IqBuffer, Origin, PpduConfig, ToneLayout};
use crate::rng::{complex_gaussian, derive_seed, seeded};
use crate::{db_to_lin, lin_to_db, SPEED_OF_LIGHT};

/// Conducted power per active tone: 18 dBm spread over 192 tones.
pub const DEFAULT_TX_TONE_POWER_DBM: f64 = -4.8;
/// kT plus a 6 dB noise figure.
pub const DEFAULT_NOISE_DBM_HZ: f64 = -168.0;
pub const DEFAULT_REFLECTION_LOSS_DB: f64 = 10.0;
const RIPPLE_SALT: u64 = 0x5249_5050;
const NOISE_SALT: u64 = 0x4E4F_4953;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("zero-length path")]
    ZeroLength,
    #[error("reflector at ({0:.3}, {1:.3}) is collinear with the endpoints")]
    Collinear(f64, f64),
    #[error("scenario has no usable beam pair (zero gain)")]
    ZeroGain,
    #[error(transparent)]
    Beam(#[from] BeamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePose {
    /// Metres, (x, y).
    pub position: [f64; 2],
    /// Boresight bearing in degrees, counter-clockwise from +x.
    pub heading_deg: f64,
}

impl NodePose {
    pub fn new(x: f64, y: f64, heading_deg: f64) -> Self {
        NodePose { position: [x, y], heading_deg }
    }

    /// Angle of `point` relative to boresight, degrees in (-180, 180].
    pub fn relative_angle(&self, point: [f64; 2]) -> f64 {
        let bearing = (point[1] - self.position[1]).atan2(point[0] - self.position[0]).to_degrees();
        wrap_deg(bearing - self.heading_deg)
    }

    fn distance(&self, point: [f64; 2]) -> f64 {
        (point[0] - self.position[0]).hypot(point[1] - self.position[1])
    }
}

fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Los,
    Reflector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub kind: PathKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflector_position: Option<[f64; 2]>,
    #[serde(default)]
    pub reflection_loss_db: f64,
}

impl PathSpec {
    pub fn los() -> Self {
        PathSpec { kind: PathKind::Los, reflector_position: None, reflection_loss_db: 0.0 }
    }

    pub fn reflector(x: f64, y: f64, loss_db: f64) -> Self {
        PathSpec { kind: PathKind::Reflector, reflector_position: Some([x, y]), reflection_loss_db: loss_db }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    FloorDbmHz { dbm_hz: f64 },
    /// Resolved with [`calibrate_to_snr`] against the codebook.
    TargetSnr { snr_db: f64 },
}

/// Smooth random per-tone ripple bounded by `max_depth_db` peak to peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RippleSpec {
    pub max_depth_db: f64,
    #[serde(default = "default_ripple_taps")]
    pub taps: usize,
}

fn default_ripple_taps() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub tx_pose: NodePose,
    pub rx_pose: NodePose,
    pub paths: Vec<PathSpec>,
    pub carrier_frequency_hz: f64,
    #[serde(default = "default_tx_power")]
    pub tx_tone_power_dbm: f64,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub cfo_hz: f64,
    #[serde(default)]
    pub ripple: Option<RippleSpec>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub element_model: ElementModel,
}

fn default_tx_power() -> f64 {
    DEFAULT_TX_TONE_POWER_DBM
}

impl ChannelConfig {
    /// Two nodes facing each other along x, LOS only.
    pub fn facing(distance_m: f64, carrier_hz: f64) -> Self {
        ChannelConfig {
            tx_pose: NodePose::new(0.0, 0.0, 0.0),
            rx_pose: NodePose::new(distance_m, 0.0, 180.0),
            paths: vec![PathSpec::los()],
            carrier_frequency_hz: carrier_hz,
            tx_tone_power_dbm: DEFAULT_TX_TONE_POWER_DBM,
            noise: NoiseSpec::FloorDbmHz { dbm_hz: DEFAULT_NOISE_DBM_HZ },
            cfo_hz: 0.0,
            ripple: None,
            rng_seed: 0,
            element_model: ElementModel::Cosine,
        }
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry::evk(self.carrier_frequency_hz)
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidConfig(m.to_string()));
        self.geometry().validate()?;
        let finite = |p: &NodePose| p.position.iter().all(|v| v.is_finite()) && p.heading_deg.is_finite();
        if !finite(&self.tx_pose) || !finite(&self.rx_pose) {
            return bad("node poses must be finite");
        }
        if self.paths.is_empty() {
            return bad("at least one path is required");
        }
        for p in &self.paths {
            if !(p.reflection_loss_db.is_finite() && p.reflection_loss_db >= 0.0) {
                return bad("reflection loss must be >= 0 dB");
            }
            if p.kind == PathKind::Reflector && p.reflector_position.is_none() {
                return bad("reflector path needs reflector_position");
            }
        }
        if !self.cfo_hz.is_finite() || !self.tx_tone_power_dbm.is_finite() {
            return bad("cfo and tx power must be finite");
        }
        if let Some(r) = self.ripple {
            if !(r.max_depth_db.is_finite() && r.max_depth_db >= 0.0) || r.taps == 0 || r.taps > 16 {
                return bad("ripple depth must be >= 0 dB with 1..16 taps");
            }
        }
        match self.noise {
            NoiseSpec::FloorDbmHz { dbm_hz } if !dbm_hz.is_finite() => bad("noise floor must be finite"),
            NoiseSpec::TargetSnr { snr_db } if !snr_db.is_finite() => bad("target SNR must be finite"),
            _ => Ok(()),
        }
    }
}

/// One resolved propagation path for a particular beam pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathResponse {
    pub kind: PathKind,
    pub gain: Complex64,
    pub length_m: f64,
    pub delay_samples: usize,
    pub aod_deg: f64,
    pub aoa_deg: f64,
}

#[derive(Debug, Clone, Copy)]
struct PathGeometry {
    length_m: f64,
    aod_deg: f64,
    aoa_deg: f64,
    loss_db: f64,
}

fn path_geometry(path: &PathSpec, cfg: &ChannelConfig) -> Result<PathGeometry, ChannelError> {
    let (tx, rx) = (&cfg.tx_pose, &cfg.rx_pose);
    match path.kind {
        PathKind::Los => {
            let r = tx.distance(rx.position);
            if r <= 0.0 {
                return Err(ChannelError::ZeroLength);
            }
            Ok(PathGeometry {
                length_m: r,
                aod_deg: tx.relative_angle(rx.position),
                aoa_deg: rx.relative_angle(tx.position),
                loss_db: 0.0,
            })
        }
        PathKind::Reflector => {
            let p = path.reflector_position.ok_or_else(|| ChannelError::InvalidConfig("reflector path needs reflector_position".into()))?;
            let (d1, d2) = (tx.distance(p), rx.distance(p));
            if d1 <= 0.0 || d2 <= 0.0 {
                return Err(ChannelError::ZeroLength);
            }
            let (a, b) = (tx.position, rx.position);
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if cross.abs() < 1e-9 * (d1 + d2) * (d1 + d2) {
                return Err(ChannelError::Collinear(p[0], p[1]));
            }
            Ok(PathGeometry {
                length_m: d1 + d2,
                aod_deg: tx.relative_angle(p),
                aoa_deg: rx.relative_angle(p),
                loss_db: path.reflection_loss_db,
            })
        }
    }
}

fn far_field(awv: &Awv, geometry: &ArrayGeometry, element: ElementModel, angle_deg: f64) -> Result<Complex64, ChannelError> {
    Ok(beamforming::field_pattern(awv, geometry, element, angle_deg)?)
}

fn path_response(
    path: &PathSpec,
    tx_awv: &Awv,
    rx_awv: &Awv,
    cfg: &ChannelConfig,
    sample_rate_hz: f64,
) -> Result<PathResponse, ChannelError> {
    let g = path_geometry(path, cfg)?;
    let geom = cfg.geometry();
    let lambda = cfg.wavelength_m();
    let ft = far_field(tx_awv, &geom, cfg.element_model, g.aod_deg)?;
    let fr = far_field(rx_awv, &geom, cfg.element_model, g.aoa_deg)?;
    let spread = lambda / (4.0 * PI * g.length_m);
    let phase = Complex64::from_polar(1.0, -2.0 * PI * g.length_m / lambda);
    let gain = ft * fr * spread * phase * 10f64.powf(-g.loss_db / 20.0);
    Ok(PathResponse {
        kind: path.kind,
        gain,
        length_m: g.length_m,
        delay_samples: (g.length_m / SPEED_OF_LIGHT * sample_rate_hz).round() as usize,
        aod_deg: g.aod_deg,
        aoa_deg: g.aoa_deg,
    })
}

/// Complex gain of one path for a beam pair.
pub fn path_gain(path: &PathSpec, tx_awv: &Awv, rx_awv: &Awv, cfg: &ChannelConfig) -> Result<Complex64, ChannelError> {
    cfg.validate()?;
    Ok(path_response(path, tx_awv, rx_awv, cfg, PpduConfig::default().sample_rate_hz)?.gain)
}

/// A validated channel with its noise level and ripple filter resolved.
#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    sample_rate_hz: f64,
    layout: ToneLayout,
    ripple: Vec<Complex64>,
    /// Per-sample (and per-tone) noise variance in transmit tone units.
    noise_var: f64,
}

impl Channel {
    pub fn new(cfg: &ChannelConfig) -> Result<Self, ChannelError> {
        Self::with_ppdu(cfg, &PpduConfig::default())
    }

    pub fn with_ppdu(cfg: &ChannelConfig, ppdu: &PpduConfig) -> Result<Self, ChannelError> {
        cfg.validate()?;
        ppdu.validate().map_err(|e| ChannelError::InvalidConfig(e.to_string()))?;
        for p in &cfg.paths {
            path_geometry(p, cfg)?;
        }
        let layout = ToneLayout::new(ppdu);
        let ripple = match cfg.ripple {
            Some(r) if r.max_depth_db > 0.0 && r.taps > 1 => ripple_filter(&r, &layout, cfg.rng_seed),
            _ => vec![Complex64::new(1.0, 0.0)],
        };
        let mut ch = Channel { cfg: cfg.clone(), sample_rate_hz: ppdu.sample_rate_hz, layout, ripple, noise_var: 0.0 };
        ch.noise_var = match cfg.noise {
            NoiseSpec::None => 0.0,
            NoiseSpec::FloorDbmHz { dbm_hz } => ch.noise_var_for_floor(dbm_hz),
            NoiseSpec::TargetSnr { snr_db } => {
                let resolved = calibrate_to_snr(cfg, snr_db)?;
                match resolved.noise {
                    NoiseSpec::FloorDbmHz { dbm_hz } => ch.noise_var_for_floor(dbm_hz),
                    _ => unreachable!("calibration yields a floor"),
                }
            }
        };
        Ok(ch)
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    fn tone_spacing_hz(&self) -> f64 {
        self.sample_rate_hz / self.layout.n_fft as f64
    }

    fn noise_var_for_floor(&self, dbm_hz: f64) -> f64 {
        let per_tone = dbm_hz + lin_to_db(self.tone_spacing_hz());
        db_to_lin(per_tone - self.cfg.tx_tone_power_dbm)
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn ripple_taps(&self) -> &[Complex64] {
        &self.ripple
    }

    pub fn paths(&self, tx_awv: &Awv, rx_awv: &Awv) -> Result<Vec<PathResponse>, ChannelError> {
        self.cfg
            .paths
            .iter()
            .map(|p| path_response(p, tx_awv, rx_awv, &self.cfg, self.sample_rate_hz))
            .collect()
    }

    fn ripple_response(&self, tone: i32) -> Complex64 {
        let n = self.layout.n_fft as f64;
        self.ripple
            .iter()
            .enumerate()
            .map(|(d, h)| h * Complex64::from_polar(1.0, -2.0 * PI * tone as f64 * d as f64 / n))
            .sum()
    }

    /// Channel frequency response on the active tones.
    pub fn frequency_response(&self, tx_awv: &Awv, rx_awv: &Awv) -> Result<Vec<Complex64>, ChannelError> {
        let paths = self.paths(tx_awv, rx_awv)?;
        Ok(self.response_from_paths(&paths))
    }

    fn response_from_paths(&self, paths: &[PathResponse]) -> Vec<Complex64> {
        let n = self.layout.n_fft as f64;
        self.layout
            .active
            .iter()
            .map(|&k| {
                let h: Complex64 = paths
                    .iter()
                    .map(|p| p.gain * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * p.delay_samples as f64 / n))
                    .sum();
                h * self.ripple_response(k)
            })
            .collect()
    }

    /// Expected post-FFT SNR in dB for a beam pair.
    pub fn expected_snr_db(&self, tx_awv: &Awv, rx_awv: &Awv) -> Result<f64, ChannelError> {
        let h = self.frequency_response(tx_awv, rx_awv)?;
        let s = h.iter().map(|x| x.norm_sqr()).sum::<f64>() / h.len() as f64;
        Ok(lin_to_db(s / self.noise_var))
    }

    /// Propagates `iq` using the config's seed.
    pub fn propagate(&self, iq: &IqBuffer, tx_awv: &Awv, rx_awv: &Awv) -> Result<IqBuffer, ChannelError> {
        self.propagate_seeded(iq, tx_awv, rx_awv, self.cfg.rng_seed)
    }

    /// Propagates `iq` drawing noise from `seed`.
    pub fn propagate_seeded(&self, iq: &IqBuffer, tx_awv: &Awv, rx_awv: &Awv, seed: u64) -> Result<IqBuffer, ChannelError> {
        if iq.is_empty() {
            return Err(ChannelError::InvalidConfig("empty input buffer".into()));
        }
        let paths = self.paths(tx_awv, rx_awv)?;
        let max_delay = paths.iter().map(|p| p.delay_samples).max().unwrap_or(0);
        let tail = self.ripple.len() - 1 + self.layout.n_fft / 4;
        let mut out = vec![Complex64::default(); iq.len() + max_delay + tail];
        for p in &paths {
            for (i, &x) in iq.samples.iter().enumerate() {
                out[i + p.delay_samples] += p.gain * x;
            }
        }
        if self.ripple.len() > 1 {
            let src = out.clone();
            for (n, o) in out.iter_mut().enumerate() {
                *o = self
                    .ripple
                    .iter()
                    .enumerate()
                    .filter(|&(d, _)| d <= n)
                    .map(|(d, h)| h * src[n - d])
                    .sum();
            }
        }
        if self.cfg.cfo_hz != 0.0 {
            let w = 2.0 * PI * self.cfg.cfo_hz / iq.sample_rate_hz;
            for (n, o) in out.iter_mut().enumerate() {
                *o *= Complex64::from_polar(1.0, w * n as f64);
            }
        }
        if self.noise_var > 0.0 {
            let mut rng = seeded(derive_seed(seed, &[NOISE_SALT]));
            for o in out.iter_mut() {
                *o += complex_gaussian(&mut rng, self.noise_var);
            }
        }
        Ok(IqBuffer::new(out, iq.sample_rate_hz, Origin::Channel))
    }
}

/// Random FIR `[1, a c_1, ..., a c_{T-1}]` whose active-tone magnitude spans
/// exactly `max_depth_db`, normalised to unit mean power over the active tones.
fn ripple_filter(spec: &RippleSpec, layout: &ToneLayout, seed: u64) -> Vec<Complex64> {
    let mut rng = seeded(derive_seed(seed, &[RIPPLE_SALT]));
    let shape: Vec<Complex64> = (1..spec.taps).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
    let n = layout.n_fft as f64;
    let response = |a: f64| -> Vec<f64> {
        layout
            .active
            .iter()
            .map(|&k| {
                let mut h = Complex64::new(1.0, 0.0);
                for (d, c) in shape.iter().enumerate() {
                    h += a * c * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * (d + 1) as f64 / n);
                }
                h.norm_sqr()
            })
            .collect()
    };
    let depth = |a: f64| {
        let r = response(a);
        let (lo, hi) = r.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        lin_to_db(hi / lo.max(1e-300))
    };
    let (mut lo, mut hi) = (0.0, 0.05);
    while depth(hi) < spec.max_depth_db && hi < 1e3 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if depth(mid) < spec.max_depth_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let mean = response(a).iter().sum::<f64>() / layout.active.len() as f64;
    let norm = mean.sqrt().recip();
    std::iter::once(Complex64::new(norm, 0.0)).chain(shape.iter().map(|c| c * a * norm)).collect()
}

/// Best codebook pair by expected SNR: `(tx_idx, rx_idx, snr_db)`.
pub fn best_analytic_pair(channel: &Channel, tx_cb: &Codebook, rx_cb: &Codebook) -> Result<(u8, u8, f64), ChannelError> {
    let mut best: Option<(u8, u8, f64)> = None;
    for t in &tx_cb.entries {
        for r in &rx_cb.entries {
            let h = channel.frequency_response(&t.awv, &r.awv)?;
            let s = h.iter().map(|x| x.norm_sqr()).sum::<f64>() / h.len() as f64;
            if best.is_none_or(|b| s > b.2) {
                best = Some((t.beam_index, r.beam_index, s));
            }
        }
    }
    let (t, r, s) = best.ok_or(ChannelError::ZeroGain)?;
    if !(s > 0.0) {
        return Err(ChannelError::ZeroGain);
    }
    Ok((t, r, lin_to_db(s / channel.noise_var.max(f64::MIN_POSITIVE))))
}

/// Sets the noise floor so the best codebook pair sees `target_snr_db`.
pub fn calibrate_to_snr(cfg: &ChannelConfig, target_snr_db: f64) -> Result<ChannelConfig, ChannelError> {
    let mut probe = cfg.clone();
    probe.noise = NoiseSpec::FloorDbmHz { dbm_hz: 0.0 };
    let ch = Channel::new(&probe)?;
    let cb = beamforming::build_codebook(&cfg.geometry())?;
    let (_, _, snr_at_0) = best_analytic_pair(&ch, &cb, &cb)?;
    let mut out = cfg.clone();
    out.noise = NoiseSpec::FloorDbmHz { dbm_hz: snr_at_0 - target_snr_db };
    Ok(out)
}
