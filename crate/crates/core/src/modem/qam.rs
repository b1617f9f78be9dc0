//! Gray-mapped square QAM with unit average symbol energy.
//!
//! Each axis is a Gray-coded PAM. The first bit on an axis selects the sign
//! (0 is positive). BPSK uses only the in-phase axis. For square QAM the
//! first half of a symbol's bits drive I and the second half drive Q.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ModemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub const ALL: [Modulation; 4] = [Modulation::Bpsk, Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64];

    pub fn order(self) -> u32 {
        1 << self.bits_per_symbol()
    }

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
        }
    }

    pub fn from_order(m: u32) -> Option<Self> {
        match m {
            2 => Some(Modulation::Bpsk),
            4 => Some(Modulation::Qpsk),
            16 => Some(Modulation::Qam16),
            64 => Some(Modulation::Qam64),
            _ => None,
        }
    }

    /// 3-bit identifier carried in the header.
    pub fn id(self) -> u8 {
        match self {
            Modulation::Bpsk => 0,
            Modulation::Qpsk => 1,
            Modulation::Qam16 => 2,
            Modulation::Qam64 => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "16qam",
            Modulation::Qam64 => "64qam",
        }
    }

    /// Bits per axis and PAM level spacing scale.
    fn axis(self) -> (usize, f64) {
        match self {
            Modulation::Bpsk => (1, 1.0),
            _ => {
                let k = self.bits_per_symbol() / 2;
                let levels = (1usize << k) as f64;
                (k, (3.0 / (2.0 * (levels * levels - 1.0))).sqrt())
            }
        }
    }

    /// All constellation points, indexed by the symbol's bits read MSB first.
    pub fn constellation(self) -> Vec<Complex64> {
        let b = self.bits_per_symbol();
        (0..1usize << b)
            .map(|v| {
                let bits: Vec<u8> = (0..b).map(|i| ((v >> (b - 1 - i)) & 1) as u8).collect();
                map_one(self, &bits)
            })
            .collect()
    }
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modulation {
    type Err = ModemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" | "2" => Ok(Modulation::Bpsk),
            "qpsk" | "4qam" | "4" => Ok(Modulation::Qpsk),
            "16qam" | "qam16" | "16" => Ok(Modulation::Qam16),
            "64qam" | "qam64" | "64" => Ok(Modulation::Qam64),
            _ => Err(ModemError::UnknownModulation(s.to_string())),
        }
    }
}

/// Gray-coded PAM level (in units of half the level spacing) for `bits`.
fn pam_level(bits: &[u8]) -> f64 {
    let levels = 1i64 << bits.len();
    let mut binary = 0i64;
    let mut prev = 0u8;
    for &b in bits {
        prev ^= b & 1;
        binary = (binary << 1) | prev as i64;
    }
    ((levels - 1) - 2 * binary) as f64
}

fn map_one(m: Modulation, bits: &[u8]) -> Complex64 {
    let (k, scale) = m.axis();
    match m {
        Modulation::Bpsk => Complex64::new(pam_level(bits), 0.0),
        _ => Complex64::new(pam_level(&bits[..k]) * scale, pam_level(&bits[k..]) * scale),
    }
}

/// Maps coded bits to constellation symbols.
pub fn map_symbols(bits: &[u8], m: Modulation) -> Result<Vec<Complex64>, ModemError> {
    let b = m.bits_per_symbol();
    if bits.len() % b != 0 {
        return Err(ModemError::NotDivisible { bits: bits.len(), per_symbol: b });
    }
    Ok(bits.chunks(b).map(|c| map_one(m, c)).collect())
}

/// Per-axis max-log LLRs for one PAM axis value `y` (already descaled).
fn axis_llrs(y: f64, k: usize, scale: f64, inv_var: f64, out: &mut Vec<f64>) {
    let levels = 1usize << k;
    let mut best0 = vec![f64::INFINITY; k];
    let mut best1 = vec![f64::INFINITY; k];
    for v in 0..levels {
        let bits: Vec<u8> = (0..k).map(|i| ((v >> (k - 1 - i)) & 1) as u8).collect();
        let d = y - pam_level(&bits) * scale;
        let d2 = d * d;
        for (i, &b) in bits.iter().enumerate() {
            if b == 0 {
                best0[i] = best0[i].min(d2);
            } else {
                best1[i] = best1[i].min(d2);
            }
        }
    }
    for i in 0..k {
        out.push((best1[i] - best0[i]) * inv_var);
    }
}

/// Max-log LLRs (positive means bit 0). `noise_var` is the complex noise
/// variance per symbol; one value or one per symbol.
pub fn demap_llr(symbols: &[Complex64], m: Modulation, noise_var: &[f64]) -> Result<Vec<f64>, ModemError> {
    if noise_var.len() != 1 && noise_var.len() != symbols.len() {
        return Err(ModemError::InvalidLength {
            what: "noise variance list",
            expected: symbols.len(),
            got: noise_var.len(),
        });
    }
    let (k, scale) = m.axis();
    let mut out = Vec::with_capacity(symbols.len() * m.bits_per_symbol());
    for (i, s) in symbols.iter().enumerate() {
        let nv = noise_var[if noise_var.len() == 1 { 0 } else { i }].max(1e-30);
        // Per-axis variance is N0/2, so the max-log metric scales by 1/N0.
        let inv = 1.0 / nv;
        match m {
            Modulation::Bpsk => axis_llrs(s.re, 1, 1.0, inv, &mut out),
            _ => {
                axis_llrs(s.re, k, scale, inv, &mut out);
                axis_llrs(s.im, k, scale, inv, &mut out);
            }
        }
    }
    Ok(out)
}

/// Hard decisions (LLR sign) for the given symbols.
pub fn hard_demap(symbols: &[Complex64], m: Modulation) -> Vec<u8> {
    demap_llr(symbols, m, &[1.0])
        .expect("single noise variance always accepted")
        .into_iter()
        .map(|l| u8::from(l < 0.0))
        .collect()
}

/// Nearest constellation point.
pub fn nearest_point(s: Complex64, m: Modulation) -> Complex64 {
    let bits = hard_demap(&[s], m);
    map_one(m, &bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_energy() {
        for m in Modulation::ALL {
            let pts = m.constellation();
            assert_eq!(pts.len(), m.order() as usize);
            let e = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((e - 1.0).abs() < 1e-12, "{m}: {e}");
        }
    }

    #[test]
    fn bpsk_convention() {
        let s = map_symbols(&[0, 1], Modulation::Bpsk).unwrap();
        assert_eq!(s, vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
    }

    #[test]
    fn round_trip_every_point() {
        for m in Modulation::ALL {
            let b = m.bits_per_symbol();
            for (v, p) in m.constellation().into_iter().enumerate() {
                let bits: Vec<u8> = (0..b).map(|i| ((v >> (b - 1 - i)) & 1) as u8).collect();
                assert_eq!(hard_demap(&[p], m), bits);
            }
        }
    }

    #[test]
    fn neighbours_differ_in_one_bit() {
        for m in [Modulation::Qam16, Modulation::Qam64] {
            let pts = m.constellation();
            let min_d = (m.axis().1) * 2.0;
            for (a, pa) in pts.iter().enumerate() {
                for (b, pb) in pts.iter().enumerate() {
                    if ((pa - pb).norm() - min_d).abs() < 1e-9 {
                        assert_eq!((a ^ b).count_ones(), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn llr_matches_brute_force() {
        let m = Modulation::Qam16;
        let pts = m.constellation();
        let y = Complex64::new(0.13, -0.71);
        let nv = 0.3;
        let llr = demap_llr(&[y], m, &[nv]).unwrap();
        for (i, l) in llr.iter().enumerate() {
            let mut d0 = f64::INFINITY;
            let mut d1 = f64::INFINITY;
            for (v, p) in pts.iter().enumerate() {
                let d = (y - p).norm_sqr();
                if (v >> (3 - i)) & 1 == 0 {
                    d0 = d0.min(d);
                } else {
                    d1 = d1.min(d);
                }
            }
            assert!((l - (d1 - d0) / nv).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_rejected() {
        assert!(map_symbols(&[0, 1, 0], Modulation::Qpsk).is_err());
    }
}
