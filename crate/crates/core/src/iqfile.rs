//! `SDAIQ` sample files.
//!
//! ```text
//! offset  size  field
//! 0       6     magic "SDAIQ\0"
//! 6       1     format version (1)
//! 7       1     flags: bits 0-1 origin (0 tx, 1 rx, 2 channel)
//! 8       8     sample rate in Hz, u64 little-endian
//! 16      ..    interleaved f32 little-endian I, Q, I, Q, ...
//! ```

use std::io::{Read, Write};

use num_complex::Complex64;
use thiserror::Error;

use crate::modem::{IqBuffer, Origin};

pub const MAGIC: &[u8; 6] = b"SDAIQ\0";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum IqFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an SDAIQ file (bad magic)")]
    BadMagic,
    #[error("unsupported SDAIQ version {0}")]
    Version(u8),
    #[error("bad flags 0x{0:02x}")]
    Flags(u8),
    #[error("sample data length {0} is not a multiple of 8 bytes")]
    Ragged(usize),
    #[error("sample rate must be a positive integer number of Hz")]
    SampleRate,
}

pub fn encode(iq: &IqBuffer) -> Result<Vec<u8>, IqFileError> {
    let rate = iq.sample_rate_hz.round();
    if !(rate >= 1.0 && rate < u64::MAX as f64) {
        return Err(IqFileError::SampleRate);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + iq.len() * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(iq.origin.code());
    out.extend_from_slice(&(rate as u64).to_le_bytes());
    for s in &iq.samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<IqBuffer, IqFileError> {
    if bytes.len() < HEADER_LEN || &bytes[..6] != MAGIC {
        return Err(IqFileError::BadMagic);
    }
    if bytes[6] != VERSION {
        return Err(IqFileError::Version(bytes[6]));
    }
    let origin = Origin::from_code(bytes[7] & 0x03).filter(|_| bytes[7] & !0x03 == 0).ok_or(IqFileError::Flags(bytes[7]))?;
    let rate = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
    if rate == 0 {
        return Err(IqFileError::SampleRate);
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() % 8 != 0 {
        return Err(IqFileError::Ragged(body.len()));
    }
    let f = |b: &[u8]| f32::from_le_bytes(b.try_into().expect("4-byte slice")) as f64;
    let samples = body.chunks_exact(8).map(|c| Complex64::new(f(&c[..4]), f(&c[4..]))).collect();
    Ok(IqBuffer::new(samples, rate as f64, origin))
}

pub fn write<W: Write>(mut w: W, iq: &IqBuffer) -> Result<(), IqFileError> {
    w.write_all(&encode(iq)?)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<IqBuffer, IqFileError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}
