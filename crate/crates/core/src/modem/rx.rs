//! Receive chain: synchronisation, CFO correction, channel estimation and
//! refresh, CPE tracking, demapping and decoding.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ofdm::{symbol_schedule, HeaderRecord, Modem, SymbolKind};
use super::padding::{self, INFO_BITS_PER_CODEWORD};
use super::polar::{self, CODEWORD_LEN};
use super::qam::{self, Modulation};
use super::{IqBuffer, ModemError, PpduConfig};

/// Minimum normalised autocorrelation accepted as a preamble.
pub const SYNC_THRESHOLD: f64 = 0.1;
/// Floor applied to reported SNR values.
pub const SNR_FLOOR_DB: f64 = -20.0;
/// A chest symbol weaker than this fraction of the preamble is ignored.
const STALE_POWER_RATIO: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    /// First sample of the frame (start of the sync symbol's CP).
    pub timing_offset: i64,
    pub cfo_hz: f64,
    pub peak_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub timing_offset_samples: i64,
    pub cfo_hz_estimate: f64,
    pub sync_metric: f64,
    /// Least-squares estimate from the preamble CE symbol, one per active tone.
    pub channel_estimate: Vec<Complex64>,
    pub header: Option<HeaderRecord>,
    pub snr_db: f64,
    pub noise_var: f64,
    pub evm_db: Option<f64>,
    pub payload_symbols: usize,
    /// Common phase error removed from each payload symbol.
    pub cpe_rad: Vec<f64>,
    pub codewords_total: usize,
    pub codewords_crc_ok: usize,
    #[serde(skip)]
    pub payload_bits: Vec<u8>,
    pub warnings: Vec<String>,
}

impl DecodeReport {
    pub fn payload_ok(&self) -> bool {
        self.header.is_some() && self.codewords_total > 0 && self.codewords_crc_ok == self.codewords_total
    }

    pub fn modulation(&self) -> Option<Modulation> {
        self.header.map(|h| h.modulation)
    }
}

/// Post-FFT SNR measured on the reference symbols of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    pub snr_db: f64,
    pub signal_power: f64,
    pub noise_var: f64,
}

fn snr_db(signal: f64, noise: f64) -> f64 {
    if noise <= 0.0 {
        return if signal > 0.0 { f64::INFINITY } else { SNR_FLOOR_DB };
    }
    let s = signal.max(0.0) / noise;
    if s <= 0.0 {
        SNR_FLOOR_DB
    } else {
        (10.0 * s.log10()).max(SNR_FLOOR_DB)
    }
}

/// Least-squares channel estimate: average of `Y/X` over the given symbols.
pub fn estimate_channel(received: &[Vec<Complex64>], reference: &[f64]) -> Vec<Complex64> {
    let n = received.len().max(1) as f64;
    (0..reference.len())
        .map(|t| received.iter().map(|y| y[t] / reference[t]).sum::<Complex64>() / n)
        .collect()
}

/// Common phase of received pilots against the channel estimate.
pub fn track_cpe(pilots_rx: &[Complex64], pilots_h: &[Complex64], reference: &[f64]) -> f64 {
    pilots_rx
        .iter()
        .zip(pilots_h)
        .zip(reference)
        .map(|((y, h), &r)| y * (h * r).conj())
        .sum::<Complex64>()
        .arg()
}

fn rotate(samples: &[Complex64], cfo_hz: f64, fs: f64) -> Vec<Complex64> {
    if cfo_hz == 0.0 {
        return samples.to_vec();
    }
    let w = -2.0 * PI * cfo_hz / fs;
    samples
        .iter()
        .enumerate()
        .map(|(n, &s)| s * Complex64::from_polar(1.0, w * n as f64))
        .collect()
}

impl Modem {
    fn half(&self) -> usize {
        self.cfg.idft_size / 2
    }

    /// Offset from frame start to the first sample of the preamble CE body.
    fn ce_body_offset(&self) -> usize {
        self.cfg.symbol_len() + self.cfg.cp_len
    }

    /// Repeated-half autocorrelation timing and coarse CFO.
    pub fn synchronize(&self, iq: &IqBuffer) -> Result<SyncResult, ModemError> {
        iq.validate()?;
        let r = &iq.samples;
        let h = self.half();
        let n = self.cfg.idft_size;
        if r.len() < n {
            return Err(ModemError::SyncNotFound { peak_metric: 0.0 });
        }
        let mut energy = vec![0.0; r.len() + 1];
        for (i, s) in r.iter().enumerate() {
            energy[i + 1] = energy[i] + s.norm_sqr();
        }
        let mut corr = vec![Complex64::default(); r.len() - h + 1];
        for i in 0..r.len() - h {
            corr[i + 1] = corr[i] + r[i].conj() * r[i + h];
        }
        let last = r.len() - n;
        let scale = energy[r.len()] / r.len() as f64;
        let p_at = |d: usize| corr[d + h] - corr[d];
        let metric: Vec<f64> = (0..=last)
            .map(|d| {
                let ra = energy[d + h] - energy[d];
                let rb = energy[d + n] - energy[d + h];
                let den = ra * rb;
                if den <= 1e-20 * scale * scale {
                    0.0
                } else {
                    p_at(d).norm_sqr() / den
                }
            })
            .collect();
        let (peak_idx, peak) = metric
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, m)| if m > best.1 { (i, m) } else { best });
        if peak < SYNC_THRESHOLD {
            return Err(ModemError::SyncNotFound { peak_metric: peak.max(0.0) });
        }
        let span = self.cfg.symbol_len();
        let lo_lim = peak_idx.saturating_sub(span);
        let hi_lim = (peak_idx + span).min(last);
        let on_plateau: Vec<usize> = (lo_lim..=hi_lim).filter(|&d| metric[d] >= 0.9 * peak).collect();
        let (lo, hi) = (on_plateau[0], *on_plateau.last().expect("peak is on plateau"));
        let center = (lo + hi) / 2;
        let q = self.cfg.cp_len / 4;
        let p: Complex64 = (center.saturating_sub(q)..=(center + q).min(last)).map(p_at).sum();
        let cfo = p.arg() * self.cfg.sample_rate_hz / (2.0 * PI * h as f64);
        let coarse = center as i64 - (self.cfg.cp_len / 2) as i64;

        let rotated = rotate(r, cfo, self.cfg.sample_rate_hz);
        let expected = coarse + self.ce_body_offset() as i64;
        let reach = (self.cfg.cp_len * 3 / 4) as i64;
        let tau = self
            .best_ce_lag(&rotated, expected - reach, expected + reach)
            .unwrap_or(expected);
        Ok(SyncResult { timing_offset: tau - self.ce_body_offset() as i64, cfo_hz: cfo, peak_metric: peak })
    }

    /// Lag in `[from, to]` maximising correlation with the CE body.
    fn best_ce_lag(&self, r: &[Complex64], from: i64, to: i64) -> Option<i64> {
        let n = self.ce_body.len() as i64;
        let from = from.max(0);
        let to = to.min(r.len() as i64 - n);
        (from..=to)
            .map(|tau| {
                let t = tau as usize;
                let c: Complex64 = r[t..t + n as usize]
                    .iter()
                    .zip(&self.ce_body)
                    .map(|(a, b)| a * b.conj())
                    .sum();
                (tau, c.norm_sqr())
            })
            .fold(None, |best: Option<(i64, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|(tau, _)| tau)
    }

    fn active_values(&self, bins: &[Complex64]) -> Vec<Complex64> {
        self.layout.active.iter().map(|&k| bins[self.layout.bin(k)]).collect()
    }

    fn unused_power(&self, bins: &[Complex64]) -> (f64, usize) {
        let p = self.layout.unused_bins.iter().map(|&b| bins[b].norm_sqr()).sum();
        (p, self.layout.unused_bins.len())
    }

    fn raw_estimate(&self, bins: &[Complex64]) -> Vec<Complex64> {
        estimate_channel(&[self.active_values(bins)], &self.layout.reference)
    }

    /// Full receive chain.
    pub fn decode(&self, iq: &IqBuffer) -> Result<DecodeReport, ModemError> {
        let sync = self.synchronize(iq)?;
        let fs = self.cfg.sample_rate_hz;
        let sl = self.cfg.symbol_len();
        let r = rotate(&iq.samples, sync.cfo_hz, fs);
        let start = sync.timing_offset;
        let sym_start = |s: usize| -> Result<usize, ModemError> {
            let first = start + (s * sl) as i64;
            let needed = first + sl as i64;
            if first < 0 || needed > r.len() as i64 {
                return Err(ModemError::Truncated { needed: needed.max(0) as usize, available: r.len() });
            }
            Ok(first as usize)
        };

        let mut noise_acc = (0.0, 0usize);
        let add_noise = |bins: &[Complex64], acc: &mut (f64, usize)| {
            let (p, c) = self.unused_power(bins);
            acc.0 += p;
            acc.1 += c;
        };
        let mut ref_power = Vec::new();

        let ce_bins = self.fft_symbol(&r, sym_start(1)?);
        add_noise(&ce_bins, &mut noise_acc);
        let ce_raw = self.raw_estimate(&ce_bins);
        let ce_power = ce_raw.iter().map(|h| h.norm_sqr()).sum::<f64>() / ce_raw.len() as f64;
        ref_power.push(ce_power);
        let mut h_est = self.smoother.apply(&ce_raw);

        let pilot_ref = self.layout.pilot_reference();
        let equalize = |bins: &[Complex64], h: &[Complex64]| -> (Vec<Complex64>, Vec<f64>, f64) {
            let act = self.active_values(bins);
            let yp: Vec<Complex64> = self.layout.pilot_pos.iter().map(|&p| act[p]).collect();
            let hp: Vec<Complex64> = self.layout.pilot_pos.iter().map(|&p| h[p]).collect();
            let cpe = track_cpe(&yp, &hp, &pilot_ref);
            let rot = Complex64::from_polar(1.0, -cpe);
            let mut eq = Vec::with_capacity(self.layout.data_pos.len());
            let mut gain = Vec::with_capacity(self.layout.data_pos.len());
            for &p in &self.layout.data_pos {
                let hh = h[p];
                let g = hh.norm_sqr().max(1e-300);
                eq.push(act[p] * rot / hh);
                gain.push(g);
            }
            (eq, gain, cpe)
        };

        let mut report = DecodeReport {
            timing_offset_samples: sync.timing_offset,
            cfo_hz_estimate: sync.cfo_hz,
            sync_metric: sync.peak_metric,
            channel_estimate: ce_raw.clone(),
            header: None,
            snr_db: SNR_FLOOR_DB,
            noise_var: 0.0,
            evm_db: None,
            payload_symbols: 0,
            cpe_rad: Vec::new(),
            codewords_total: 0,
            codewords_crc_ok: 0,
            payload_bits: Vec::new(),
            warnings: Vec::new(),
        };

        let hdr_bins = self.fft_symbol(&r, sym_start(2)?);
        add_noise(&hdr_bins, &mut noise_acc);
        let (hdr_eq, hdr_gain, _) = equalize(&hdr_bins, &h_est);
        let hdr_nv: Vec<f64> = hdr_gain.iter().map(|g| 1.0 / g).collect();
        let hdr_llr = qam::demap_llr(&hdr_eq, Modulation::Bpsk, &hdr_nv)?;
        let hdr = polar::polar_decode(&hdr_llr)?;
        let finish_noise = |acc: (f64, usize)| if acc.1 == 0 { 0.0 } else { acc.0 / acc.1 as f64 };
        let header = HeaderRecord::from_message(&hdr.message).and_then(|h| {
            padding::plan_from_header(
                h.payload_bits as usize,
                h.pre_pad as usize,
                h.post_pad as usize,
                h.modulation,
                self.cfg.n_data_tones,
            )
            .map(|plan| (h, plan))
        });
        let Some((header, plan)) = header else {
            report.noise_var = finish_noise(noise_acc);
            report.snr_db = snr_db(ce_power - report.noise_var, report.noise_var);
            return Err(ModemError::HeaderCrc { report: Box::new(report) });
        };
        report.header = Some(header);
        report.payload_symbols = plan.ofdm_symbols;
        let m = header.modulation;

        let schedule = symbol_schedule(plan.ofdm_symbols, self.cfg.chest_interval_symbols, self.cfg.chest_field_symbols);
        sym_start(schedule.len() - 1)?;

        let mut data_syms = Vec::with_capacity(plan.ofdm_symbols * self.cfg.n_data_tones);
        let mut data_gain = Vec::with_capacity(data_syms.capacity());
        let mut chest_buf: Vec<Vec<Complex64>> = Vec::new();
        for (s, kind) in schedule.iter().enumerate().skip(3) {
            let bins = self.fft_symbol(&r, sym_start(s)?);
            add_noise(&bins, &mut noise_acc);
            match kind {
                SymbolKind::Chest => {
                    let act = self.active_values(&bins);
                    let raw = estimate_channel(std::slice::from_ref(&act), &self.layout.reference);
                    let p = raw.iter().map(|h| h.norm_sqr()).sum::<f64>() / raw.len() as f64;
                    if p < STALE_POWER_RATIO * ce_power {
                        report.warnings.push(format!("chest symbol {s} missing; using stale estimate"));
                    } else {
                        ref_power.push(p);
                        chest_buf.push(act);
                    }
                    if schedule.get(s + 1) != Some(&SymbolKind::Chest) && !chest_buf.is_empty() {
                        h_est = self.smoother.apply(&estimate_channel(&chest_buf, &self.layout.reference));
                        chest_buf.clear();
                    }
                }
                SymbolKind::Payload => {
                    let (eq, gain, cpe) = equalize(&bins, &h_est);
                    data_syms.extend(eq);
                    data_gain.extend(gain);
                    report.cpe_rad.push(cpe);
                }
                _ => {}
            }
        }

        let n0 = finish_noise(noise_acc);
        report.noise_var = n0;
        let sig = ref_power.iter().sum::<f64>() / ref_power.len() as f64;
        report.snr_db = snr_db(sig - n0, n0);
        if !data_syms.is_empty() {
            let err = data_syms.iter().map(|&y| (y - qam::nearest_point(y, m)).norm_sqr()).sum::<f64>()
                / data_syms.len() as f64;
            report.evm_db = Some(10.0 * err.max(1e-30).log10());
        }

        let nv_floor = n0.max(1e-12);
        let nv: Vec<f64> = data_gain.iter().map(|g| nv_floor / g).collect();
        let llr = qam::demap_llr(&data_syms, m, &nv)?;
        let mut info = Vec::with_capacity(plan.codewords * INFO_BITS_PER_CODEWORD);
        for block in llr[..plan.coded_bits()].chunks(CODEWORD_LEN) {
            let d = polar::polar_decode(block)?;
            report.codewords_total += 1;
            if d.crc_ok {
                report.codewords_crc_ok += 1;
            }
            info.extend_from_slice(&d.message[..INFO_BITS_PER_CODEWORD]);
        }
        let mut payload = padding::unpad_payload(&info, &plan);
        payload.truncate(header.payload_bits as usize);
        report.payload_bits = payload;
        Ok(report)
    }

    /// SNR from the reference symbols when the frame cannot be decoded.
    ///
    /// Timing comes from a full matched-filter search for the preamble CE
    /// symbol; no CFO correction is applied.
    pub fn measure_snr(&self, iq: &IqBuffer) -> Result<SnrEstimate, ModemError> {
        iq.validate()?;
        let r = &iq.samples;
        let off = self.ce_body_offset() as i64;
        let tau = self
            .best_ce_lag(r, off, r.len() as i64)
            .ok_or(ModemError::Truncated { needed: off as usize + self.cfg.idft_size, available: r.len() })?;
        let start = tau - off;
        let sl = self.cfg.symbol_len() as i64;
        let schedule = symbol_schedule(1, self.cfg.chest_interval_symbols, self.cfg.chest_field_symbols);
        let mut sig = Vec::new();
        for (s, kind) in schedule.iter().enumerate() {
            if !matches!(kind, SymbolKind::Preamble | SymbolKind::Chest) {
                continue;
            }
            let first = start + s as i64 * sl;
            if first < 0 || first + sl > r.len() as i64 {
                break;
            }
            let raw = self.raw_estimate(&self.fft_symbol(r, first as usize));
            sig.push(raw.iter().map(|h| h.norm_sqr()).sum::<f64>() / raw.len() as f64);
        }
        // Unused bins never carry signal, so every whole symbol slot counts.
        let mut noise = (0.0, 0usize);
        let mut first = start.rem_euclid(sl);
        while first + sl <= r.len() as i64 {
            let (p, c) = self.unused_power(&self.fft_symbol(r, first as usize));
            noise.0 += p;
            noise.1 += c;
            first += sl;
        }
        let n0 = noise.0 / noise.1.max(1) as f64;
        let s = sig.iter().sum::<f64>() / sig.len().max(1) as f64 - n0;
        Ok(SnrEstimate { snr_db: snr_db(s, n0), signal_power: s.max(0.0), noise_var: n0 })
    }
}

pub fn synchronize(iq: &IqBuffer, cfg: &PpduConfig) -> Result<SyncResult, ModemError> {
    Modem::new(cfg)?.synchronize(iq)
}

pub fn demod_decode(iq: &IqBuffer, cfg: &PpduConfig) -> Result<DecodeReport, ModemError> {
    Modem::new(cfg)?.decode(iq)
}
