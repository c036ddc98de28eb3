//! Digital pre-distortion laboratory.
//!
//! Models a nonlinear power amplifier with memory behind a parameterized
//! "virtual PA" oracle, learns a conditional PA surrogate network (PAN) and a
//! pre-distortion network (PDN) trained end-to-end through the frozen
//! surrogate, and measures everything with a spectral metric suite (ACLR,
//! dBc MSE, out-of-band reduction). A memory-polynomial DPD baseline is
//! included for comparison.

pub mod cli;
pub mod error;
pub mod iqsig;
pub mod losses;
pub mod mpdpd;
pub mod spectra;
pub mod tinynet;
pub mod trainer;
pub mod vpa;

pub use error::DpdError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, DpdError>;
