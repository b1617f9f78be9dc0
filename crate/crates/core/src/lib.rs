//! Software model of a 16-element (8x2) 24-29.5 GHz software-defined array.
//!
//! The crate is organised by subsystem:
//!
//! - [`beamforming`]: analog weight vectors, I/Q vector-interpolator codes,
//!   the 21-beam codebook, far-field patterns and pattern metrics.
//! - [`linkbudget`]: free-space path loss, sensitivity, range and PPDU data rate.
//! - [`modem`]: the OFDM PPDU transmitter and receiver (CRC-8, polar code,
//!   Gray QAM, padding, synchronisation, channel estimation, CPE tracking).
//! - [`channel`]: geometric LOS/reflector channel between two array nodes.
//! - [`sweep`]: the exhaustive 21x21 beam-sweep experiment and SNR matrix.
//! - [`comet`]: code-multiplexed element test (on/off codes, square-law
//!   detector, correlation extraction and element solving).
//! - [`iqfile`]: the `SDAIQ` sample file format.
//! - [`scenario`]: experiment files shipped with the crate.
//! - [`artifact`]: content-addressed output files.

pub mod artifact;
pub mod beamforming;
pub mod channel;
pub mod comet;
pub mod iqfile;
pub mod linkbudget;
pub mod modem;
pub mod rng;
pub mod scenario;
pub mod sweep;

pub use num_complex::Complex64;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Converts a power ratio in dB to linear.
#[inline]
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power ratio to dB.
#[inline]
pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Tool identification embedded in every artifact.
pub const TOOL_VERSION: &str = concat!("sda ", env!("CARGO_PKG_VERSION"));
