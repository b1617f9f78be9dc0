//! Tone plan, frame layout and the transmitter.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::padding::{self, PaddingPlan, INFO_BITS_PER_CODEWORD};
use super::qam::{self, Modulation};
use super::{crc, polar, push_uint, read_uint, IqBuffer, ModemError, Origin, PpduConfig, MAX_PAYLOAD_BITS};

/// Active, data and pilot tone indices (signed, DC = 0) plus the ±1 reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneLayout {
    pub n_fft: usize,
    pub active: Vec<i32>,
    pub data: Vec<i32>,
    pub pilots: Vec<i32>,
    /// Positions of data / pilot tones inside `active`.
    pub data_pos: Vec<usize>,
    pub pilot_pos: Vec<usize>,
    /// FFT bins carrying nothing (guard band and DC nulls).
    pub unused_bins: Vec<usize>,
    /// Reference value on each active tone (CE symbols and pilots).
    pub reference: Vec<f64>,
}

/// ±1 sequence from the x^7 + x^4 + 1 LFSR, all-ones seed.
fn reference_sequence(n: usize) -> Vec<f64> {
    let mut s: u8 = 0x7F;
    (0..n)
        .map(|_| {
            let b = ((s >> 6) ^ (s >> 3)) & 1;
            s = ((s << 1) | b) & 0x7F;
            if b == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

impl ToneLayout {
    pub fn new(cfg: &PpduConfig) -> Self {
        let half = (cfg.n_active_tones / 2) as i32;
        let dc = (cfg.n_dc_null / 2) as i32;
        let negative: Vec<i32> = (-(dc + half)..-dc).collect();
        let positive: Vec<i32> = (dc..dc + half).collect();
        let mut data_pos = Vec::new();
        let mut pilot_pos = Vec::new();
        for (offset, side) in [(0usize, &negative), (negative.len(), &positive)] {
            for j in 0..side.len() {
                if j % 3 == 1 {
                    pilot_pos.push(offset + j);
                } else {
                    data_pos.push(offset + j);
                }
            }
        }
        let active: Vec<i32> = negative.into_iter().chain(positive).collect();
        let n = cfg.idft_size;
        let used: Vec<usize> = active.iter().map(|&k| k.rem_euclid(n as i32) as usize).collect();
        let unused_bins = (0..n).filter(|b| !used.contains(b)).collect();
        ToneLayout {
            n_fft: n,
            data: data_pos.iter().map(|&p| active[p]).collect(),
            pilots: pilot_pos.iter().map(|&p| active[p]).collect(),
            reference: reference_sequence(active.len()),
            active,
            data_pos,
            pilot_pos,
            unused_bins,
        }
    }

    #[inline]
    pub fn bin(&self, tone: i32) -> usize {
        tone.rem_euclid(self.n_fft as i32) as usize
    }

    pub fn pilot_reference(&self) -> Vec<f64> {
        self.pilot_pos.iter().map(|&p| self.reference[p]).collect()
    }
}

/// Self-describing header carried on one BPSK symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub modulation: Modulation,
    pub payload_bits: u32,
    pub pre_pad: u16,
    pub post_pad: u16,
}

impl HeaderRecord {
    pub const FIELD_BITS: usize = 3 + 24 + 16 + 13;

    /// 56 field bits followed by their CRC-8.
    pub fn to_message(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(polar::MESSAGE_LEN);
        push_uint(&mut v, self.modulation.id() as u64, 3);
        push_uint(&mut v, self.payload_bits as u64, 24);
        push_uint(&mut v, self.pre_pad as u64, 16);
        push_uint(&mut v, self.post_pad as u64, 13);
        crc::append_crc(&v)
    }

    /// Parses a decoded message; `None` on CRC failure or an invalid field.
    pub fn from_message(bits: &[u8]) -> Option<Self> {
        if bits.len() != polar::MESSAGE_LEN || !crc::check_crc(bits) {
            return None;
        }
        Some(HeaderRecord {
            modulation: Modulation::from_id(read_uint(&bits[0..3]) as u8)?,
            payload_bits: read_uint(&bits[3..27]) as u32,
            pre_pad: read_uint(&bits[27..43]) as u16,
            post_pad: read_uint(&bits[43..56]) as u16,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Sync,
    Preamble,
    Header,
    Chest,
    Payload,
}

/// Symbol schedule: preamble, header, then a chest field before every group
/// of up to `interval` payload symbols.
pub fn symbol_schedule(payload_symbols: usize, interval: usize, field: usize) -> Vec<SymbolKind> {
    let mut s = vec![SymbolKind::Sync, SymbolKind::Preamble, SymbolKind::Header];
    let mut left = payload_symbols;
    while left > 0 {
        s.extend(std::iter::repeat_n(SymbolKind::Chest, field));
        let n = left.min(interval);
        s.extend(std::iter::repeat_n(SymbolKind::Payload, n));
        left -= n;
    }
    s
}

/// Frame metadata; also the JSON sidecar written next to IQ files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub modulation: Modulation,
    pub header: HeaderRecord,
    pub codewords: usize,
    pub payload_symbols: usize,
    /// Symbol index of the first symbol of each chest field.
    pub chest_fields: Vec<usize>,
    pub chest_field_symbols: usize,
    pub symbols: Vec<SymbolKind>,
    pub symbol_len: usize,
    pub preamble_samples: usize,
    pub total_samples: usize,
    pub sample_rate_hz: f64,
    pub pilot_tones: Vec<i32>,
    pub data_tones: Vec<i32>,
}

impl Frame {
    pub fn new(cfg: &PpduConfig, layout: &ToneLayout, header: HeaderRecord, plan: &PaddingPlan) -> Self {
        let symbols = symbol_schedule(plan.ofdm_symbols, cfg.chest_interval_symbols, cfg.chest_field_symbols);
        let chest_fields = symbols
            .iter()
            .enumerate()
            .filter(|&(i, k)| *k == SymbolKind::Chest && symbols[i - 1] != SymbolKind::Chest)
            .map(|(i, _)| i)
            .collect();
        Frame {
            modulation: header.modulation,
            header,
            codewords: plan.codewords,
            payload_symbols: plan.ofdm_symbols,
            chest_fields,
            chest_field_symbols: cfg.chest_field_symbols,
            symbol_len: cfg.symbol_len(),
            preamble_samples: 2 * cfg.symbol_len(),
            total_samples: symbols.len() * cfg.symbol_len(),
            symbols,
            sample_rate_hz: cfg.sample_rate_hz,
            pilot_tones: layout.pilots.clone(),
            data_tones: layout.data.clone(),
        }
    }

    /// Original payload length reconstructed from the header's padding counts.
    pub fn reconstructed_payload_bits(&self) -> usize {
        self.codewords * INFO_BITS_PER_CODEWORD - self.header.pre_pad as usize
    }
}

/// Least-squares projection of per-tone estimates onto a short delay span.
#[derive(Debug, Clone)]
pub(crate) struct TapSmoother {
    basis: DMatrix<Complex64>,
    pinv: DMatrix<Complex64>,
}

impl TapSmoother {
    fn new(layout: &ToneLayout, first_delay: i32, taps: usize) -> Self {
        let n = layout.n_fft as f64;
        let basis = DMatrix::from_fn(layout.active.len(), taps, |r, c| {
            let d = (first_delay + c as i32) as f64;
            Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * layout.active[r] as f64 * d / n)
        });
        let adj = basis.adjoint();
        let gram = &adj * &basis;
        let inv = gram.try_inverse().expect("tap basis has full column rank");
        TapSmoother { pinv: inv * adj, basis }
    }

    pub(crate) fn apply(&self, raw: &[Complex64]) -> Vec<Complex64> {
        let v = DMatrix::from_column_slice(raw.len(), 1, raw);
        let taps = &self.pinv * v;
        (&self.basis * taps).column(0).iter().copied().collect()
    }
}

/// Transmitter and receiver for one [`PpduConfig`], with cached FFT plans.
#[derive(Clone)]
pub struct Modem {
    pub(crate) cfg: PpduConfig,
    pub(crate) layout: ToneLayout,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    pub(crate) smoother: TapSmoother,
    /// Samples by which the FFT window starts ahead of the CP end.
    pub(crate) backoff: usize,
    pub(crate) ce_body: Vec<Complex64>,
}

impl std::fmt::Debug for Modem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Modem").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Modem {
    pub fn new(cfg: &PpduConfig) -> Result<Self, ModemError> {
        cfg.validate()?;
        let layout = ToneLayout::new(cfg);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(cfg.idft_size);
        let ifft = planner.plan_fft_inverse(cfg.idft_size);
        let backoff = cfg.cp_len / 16;
        let taps = (cfg.cp_len / 4).max(1);
        let smoother = TapSmoother::new(&layout, -(backoff as i32), taps);
        let mut m = Modem { cfg: cfg.clone(), layout, fft, ifft, smoother, backoff, ce_body: Vec::new() };
        let ce = m.active_to_bins(&m.ce_values());
        m.ce_body = m.ifft_body(ce);
        Ok(m)
    }

    pub fn config(&self) -> &PpduConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ToneLayout {
        &self.layout
    }

    fn norm(&self) -> f64 {
        (self.cfg.idft_size as f64).sqrt().recip()
    }

    fn ce_values(&self) -> Vec<Complex64> {
        self.layout.reference.iter().map(|&r| Complex64::new(r, 0.0)).collect()
    }

    fn sync_values(&self) -> Vec<Complex64> {
        let s = std::f64::consts::SQRT_2;
        self.layout
            .active
            .iter()
            .zip(&self.layout.reference)
            .map(|(&k, &r)| if k % 2 == 0 { Complex64::new(r * s, 0.0) } else { Complex64::default() })
            .collect()
    }

    pub(crate) fn active_to_bins(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut bins = vec![Complex64::default(); self.cfg.idft_size];
        for (&k, &v) in self.layout.active.iter().zip(values) {
            bins[self.layout.bin(k)] = v;
        }
        bins
    }

    fn ifft_body(&self, mut bins: Vec<Complex64>) -> Vec<Complex64> {
        self.ifft.process(&mut bins);
        let g = self.norm();
        bins.iter_mut().for_each(|x| *x *= g);
        bins
    }

    /// One time-domain symbol (CP + body) from active-tone values.
    pub fn modulate_symbol(&self, active_values: &[Complex64]) -> Vec<Complex64> {
        let body = self.ifft_body(self.active_to_bins(active_values));
        let n = self.cfg.idft_size;
        let mut out = Vec::with_capacity(self.cfg.symbol_len());
        out.extend_from_slice(&body[n - self.cfg.cp_len..]);
        out.extend_from_slice(&body);
        out
    }

    /// Orthonormal forward FFT of `samples[start..start + N]`, compensated for
    /// the window backoff. `start` is the first sample of the CP.
    pub(crate) fn fft_symbol(&self, samples: &[Complex64], start: usize) -> Vec<Complex64> {
        let n = self.cfg.idft_size;
        let w = start + self.cfg.cp_len - self.backoff;
        let mut buf = samples[w..w + n].to_vec();
        self.fft.process(&mut buf);
        let g = self.norm();
        let b = self.backoff as f64;
        for (bin, x) in buf.iter_mut().enumerate() {
            let k = if bin >= n / 2 { bin as f64 - n as f64 } else { bin as f64 };
            *x *= Complex64::from_polar(g, 2.0 * std::f64::consts::PI * k * b / n as f64);
        }
        buf
    }

    /// Active-tone values of one received symbol (CP + body).
    pub fn demodulate_symbol(&self, symbol: &[Complex64]) -> Vec<Complex64> {
        let bins = self.fft_symbol(symbol, 0);
        self.layout.active.iter().map(|&k| bins[self.layout.bin(k)]).collect()
    }

    fn data_symbol(&self, data: &[Complex64]) -> Vec<Complex64> {
        let mut v = self.ce_values();
        for (&p, &d) in self.layout.data_pos.iter().zip(data) {
            v[p] = d;
        }
        self.modulate_symbol(&v)
    }

    pub fn header_for(&self, payload_bits: usize, modulation: Modulation) -> (HeaderRecord, PaddingPlan) {
        let plan = padding::plan_padding(payload_bits, modulation, self.cfg.n_data_tones);
        let h = HeaderRecord {
            modulation,
            payload_bits: payload_bits as u32,
            pre_pad: plan.pre_pad as u16,
            post_pad: plan.post_pad as u16,
        };
        (h, plan)
    }

    /// Builds a PPDU for `bits` (one bit per byte) using the configured modulation.
    pub fn build(&self, bits: &[u8]) -> Result<(IqBuffer, Frame), ModemError> {
        if bits.len() > MAX_PAYLOAD_BITS {
            return Err(ModemError::PayloadTooLarge { bits: bits.len(), max: MAX_PAYLOAD_BITS });
        }
        let m = self.cfg.modulation;
        let (header, plan) = self.header_for(bits.len(), m);
        let (padded, _) = padding::pad_payload(bits, m, self.cfg.n_data_tones);
        let mut coded = Vec::with_capacity(plan.coded_bits() + plan.post_pad);
        for chunk in padded.chunks(INFO_BITS_PER_CODEWORD) {
            let msg: Vec<u8> = chunk.iter().map(|b| b & 1).collect();
            coded.extend(polar::polar_encode(&crc::append_crc(&msg))?);
        }
        coded.resize(coded.len() + plan.post_pad, 0);
        let symbols = qam::map_symbols(&coded, m)?;

        let header_cw = polar::polar_encode(&header.to_message())?;
        let header_syms = qam::map_symbols(&header_cw, Modulation::Bpsk)?;

        let frame = Frame::new(&self.cfg, &self.layout, header, &plan);
        let mut samples = Vec::with_capacity(frame.total_samples);
        let mut payload = symbols.chunks(self.cfg.n_data_tones);
        for kind in &frame.symbols {
            let sym = match kind {
                SymbolKind::Sync => self.modulate_symbol(&self.sync_values()),
                SymbolKind::Preamble | SymbolKind::Chest => self.modulate_symbol(&self.ce_values()),
                SymbolKind::Header => self.data_symbol(&header_syms),
                SymbolKind::Payload => self.data_symbol(payload.next().expect("schedule matches plan")),
            };
            samples.extend(sym);
        }
        Ok((IqBuffer::new(samples, self.cfg.sample_rate_hz, Origin::Tx), frame))
    }
}

/// Builds a PPDU with a fresh [`Modem`].
pub fn build_ppdu(bits: &[u8], cfg: &PpduConfig) -> Result<(IqBuffer, Frame), ModemError> {
    Modem::new(cfg)?.build(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_plan() {
        let l = ToneLayout::new(&PpduConfig::default());
        assert_eq!(l.active.len(), 192);
        assert_eq!(l.data.len(), 128);
        assert_eq!(l.pilots.len(), 64);
        assert_eq!(l.unused_bins.len(), 64);
        assert_eq!((l.active[0], l.active[191]), (-100, 99));
        for k in -4..4 {
            assert!(!l.active.contains(&k));
        }
        // Pilots mirror around DC.
        let neg: Vec<i32> = l.pilots.iter().filter(|&&k| k < 0).map(|k| -k).collect();
        let pos: Vec<i32> = l.pilots.iter().filter(|&&k| k > 0).copied().collect();
        assert_eq!(neg.len(), pos.len());
        assert!(l.reference.iter().all(|&r| r == 1.0 || r == -1.0));
        let sum: f64 = l.reference.iter().sum();
        assert!(sum.abs() < 20.0);
    }

    #[test]
    fn header_round_trip() {
        let h = HeaderRecord { modulation: Modulation::Qam64, payload_bits: 123_456, pre_pad: 167, post_pad: 4000 };
        let bits = h.to_message();
        assert_eq!(bits.len(), 64);
        assert_eq!(HeaderRecord::from_message(&bits), Some(h));
        let mut bad = bits.clone();
        bad[5] ^= 1;
        assert_eq!(HeaderRecord::from_message(&bad), None);
    }

    #[test]
    fn chest_field_count() {
        let s = symbol_schedule(17, 16, 1);
        assert_eq!(s.iter().filter(|&&k| k == SymbolKind::Chest).count(), 2);
        let s = symbol_schedule(16, 16, 2);
        assert_eq!(s.iter().filter(|&&k| k == SymbolKind::Chest).count(), 2);
        assert_eq!(symbol_schedule(0, 16, 2).len(), 3);
    }

    #[test]
    fn symbol_duration() {
        let cfg = PpduConfig::default();
        let t = cfg.symbol_len() as f64 / cfg.sample_rate_hz;
        assert!((t - 208.333e-9).abs() < 1e-12);
    }

    #[test]
    fn cyclic_prefix_copies_body_tail() {
        let m = Modem::new(&PpduConfig::default()).unwrap();
        let (iq, frame) = m.build(&[1, 0, 1, 1]).unwrap();
        for s in 0..frame.symbols.len() {
            let sym = &iq.samples[s * 320..(s + 1) * 320];
            for i in 0..64 {
                assert!((sym[i] - sym[256 + i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_payload_frame() {
        let (iq, frame) = build_ppdu(&[], &PpduConfig::default()).unwrap();
        assert_eq!(frame.payload_symbols, 1);
        assert_eq!(frame.chest_fields, vec![3]);
        assert_eq!(iq.len(), frame.total_samples);
        assert_eq!(frame.reconstructed_payload_bits(), 0);
    }

    #[test]
    fn oversize_payload_rejected() {
        let m = Modem::new(&PpduConfig::default()).unwrap();
        assert!(matches!(
            m.build(&vec![0; MAX_PAYLOAD_BITS + 1]),
            Err(ModemError::PayloadTooLarge { .. })
        ));
    }
}
