//! Payload padding to whole codewords, modulation symbols and OFDM symbols.
//!
//! Info bits are pre-padded with zeros so that they fill an integer number of
//! codewords whose coded bits also fill an integer number of constellation
//! symbols. Coded zeros are then post-padded so the last OFDM payload symbol
//! is full.

use super::crc::CRC_LEN;
use super::polar::{CODEWORD_LEN, MESSAGE_LEN};
use super::qam::Modulation;

/// Info bits carried per codeword (message minus CRC).
pub const INFO_BITS_PER_CODEWORD: usize = MESSAGE_LEN - CRC_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddingPlan {
    pub payload_bits: usize,
    pub pre_pad: usize,
    pub post_pad: usize,
    pub codewords: usize,
    pub ofdm_symbols: usize,
}

impl PaddingPlan {
    pub fn coded_bits(&self) -> usize {
        self.codewords * CODEWORD_LEN
    }
}

/// Codeword count granularity so that coded bits divide into symbols.
fn codeword_step(m: Modulation) -> usize {
    let b = m.bits_per_symbol();
    let mut n = 1;
    while (n * CODEWORD_LEN) % b != 0 {
        n += 1;
    }
    n
}

pub fn plan_padding(payload_bits: usize, m: Modulation, n_data_tones: usize) -> PaddingPlan {
    let step = codeword_step(m);
    let needed = payload_bits.div_ceil(INFO_BITS_PER_CODEWORD).max(1);
    let codewords = needed.div_ceil(step) * step;
    let pre_pad = codewords * INFO_BITS_PER_CODEWORD - payload_bits;
    let per_symbol = n_data_tones * m.bits_per_symbol();
    let coded = codewords * CODEWORD_LEN;
    let ofdm_symbols = coded.div_ceil(per_symbol);
    PaddingPlan {
        payload_bits,
        pre_pad,
        post_pad: ofdm_symbols * per_symbol - coded,
        codewords,
        ofdm_symbols,
    }
}

/// Reconstructs the plan from header fields.
pub fn plan_from_header(payload_bits: usize, pre_pad: usize, post_pad: usize, m: Modulation, n_data_tones: usize) -> Option<PaddingPlan> {
    let plan = plan_padding(payload_bits, m, n_data_tones);
    (plan.pre_pad == pre_pad && plan.post_pad == post_pad).then_some(plan)
}

/// Returns the padded info bits and the plan.
pub fn pad_payload(bits: &[u8], m: Modulation, n_data_tones: usize) -> (Vec<u8>, PaddingPlan) {
    let plan = plan_padding(bits.len(), m, n_data_tones);
    let mut out = vec![0u8; plan.pre_pad];
    out.extend_from_slice(bits);
    (out, plan)
}

/// Inverse of [`pad_payload`] on the info-bit stream.
pub fn unpad_payload(padded: &[u8], plan: &PaddingPlan) -> Vec<u8> {
    padded[plan.pre_pad.min(padded.len())..].to_vec()
}
