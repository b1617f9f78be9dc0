//! Rate-1/2 polar code, N = 128, K = 64, with successive-cancellation decoding.
//!
//! Encoding is `x = B_N (u F^{⊗7})` where `u` carries the message on the
//! information positions and zeros on the frozen ones. LLRs are positive for
//! bit 0.

use super::crc;
use super::ModemError;

pub const CODEWORD_LEN: usize = 128;
pub const MESSAGE_LEN: usize = 64;
const LOG2_N: u32 = 7;

/// Design Eb/N0 used to rank the synthetic channels.
pub const DESIGN_EBN0_DB: f64 = 2.0;

/// Information positions (indices into `u`), ascending. The remaining 64
/// positions are frozen to zero. Reproduced by `bhattacharyya_ranking` in the tests.
pub const INFO_POSITIONS: [usize; MESSAGE_LEN] = [
    31, 45, 46, 47, 51, 53, 54, 55, 57, 58, 59, 60, 61, 62, 63, 71,
    75, 77, 78, 79, 83, 84, 85, 86, 87, 88, 89, 90, 91, 92, 93, 94,
    95, 97, 98, 99, 100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 110, 111,
    112, 113, 114, 115, 116, 117, 118, 119, 120, 121, 122, 123, 124, 125, 126, 127,
];

const fn frozen_mask() -> [bool; CODEWORD_LEN] {
    let mut mask = [true; CODEWORD_LEN];
    let mut i = 0;
    while i < MESSAGE_LEN {
        mask[INFO_POSITIONS[i]] = false;
        i += 1;
    }
    mask
}

/// `FROZEN[i]` is true when `u_i` is frozen.
pub const FROZEN: [bool; CODEWORD_LEN] = frozen_mask();

#[inline]
fn bit_reverse(i: usize) -> usize {
    i.reverse_bits() >> (usize::BITS - LOG2_N)
}

/// In-place `u F^{⊗n}` butterfly over GF(2).
fn transform(v: &mut [u8]) {
    let n = v.len();
    let mut half = n / 2;
    while half >= 1 {
        for block in (0..n).step_by(2 * half) {
            for j in block..block + half {
                v[j] ^= v[j + half];
            }
        }
        half /= 2;
    }
}

/// Encodes 64 message bits into a 128-bit codeword.
pub fn polar_encode(message: &[u8]) -> Result<Vec<u8>, ModemError> {
    if message.len() != MESSAGE_LEN {
        return Err(ModemError::InvalidLength {
            what: "polar message",
            expected: MESSAGE_LEN,
            got: message.len(),
        });
    }
    let mut u = [0u8; CODEWORD_LEN];
    for (&pos, &b) in INFO_POSITIONS.iter().zip(message) {
        u[pos] = b & 1;
    }
    transform(&mut u);
    Ok((0..CODEWORD_LEN).map(|i| u[bit_reverse(i)]).collect())
}

#[inline]
fn f_minsum(a: f64, b: f64) -> f64 {
    a.signum() * b.signum() * a.abs().min(b.abs())
}

#[inline]
fn g_combine(a: f64, b: f64, bit: u8) -> f64 {
    if bit == 0 {
        b + a
    } else {
        b - a
    }
}

/// Recursive SC over `llr` (natural order). `offset` is the index of the first
/// `u` bit handled by this subtree. Writes decisions to `u` and returns the
/// re-encoded partial codeword.
fn sc_decode(llr: &[f64], offset: usize, u: &mut [u8]) -> Vec<u8> {
    let n = llr.len();
    if n == 1 {
        let bit = if FROZEN[offset] || llr[0] >= 0.0 { 0 } else { 1 };
        u[offset] = bit;
        return vec![bit];
    }
    let h = n / 2;
    let (top, bot) = llr.split_at(h);
    let left: Vec<f64> = top.iter().zip(bot).map(|(&a, &b)| f_minsum(a, b)).collect();
    let ca = sc_decode(&left, offset, u);
    let right: Vec<f64> = top
        .iter()
        .zip(bot)
        .zip(&ca)
        .map(|((&a, &b), &c)| g_combine(a, b, c))
        .collect();
    let cb = sc_decode(&right, offset + h, u);
    let mut out = Vec::with_capacity(n);
    out.extend(ca.iter().zip(&cb).map(|(a, b)| a ^ b));
    out.extend_from_slice(&cb);
    out
}

/// Output of [`polar_decode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarDecoded {
    pub message: Vec<u8>,
    pub crc_ok: bool,
}

/// Successive-cancellation decode. `crc_ok` checks the trailing 8 message bits
/// as a CRC-8 over the first 56.
pub fn polar_decode(llrs: &[f64]) -> Result<PolarDecoded, ModemError> {
    if llrs.len() != CODEWORD_LEN {
        return Err(ModemError::InvalidLength {
            what: "polar LLR block",
            expected: CODEWORD_LEN,
            got: llrs.len(),
        });
    }
    if llrs.iter().any(|l| !l.is_finite()) {
        return Err(ModemError::NonFinite("polar LLR"));
    }
    let natural: Vec<f64> = (0..CODEWORD_LEN).map(|i| llrs[bit_reverse(i)]).collect();
    let mut u = [0u8; CODEWORD_LEN];
    sc_decode(&natural, 0, &mut u);
    let message: Vec<u8> = INFO_POSITIONS.iter().map(|&p| u[p]).collect();
    let crc_ok = crc::check_crc(&message);
    Ok(PolarDecoded { message, crc_ok })
}
