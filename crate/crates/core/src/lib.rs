//! Nonlocal dephasing of a photon pair whose frequency environments are
//! correlated.
//!
//! The crate models the environment ([`spectra`]), applies the resulting
//! dephasing map to two-qubit polarization states ([`channel`]), drives it
//! along quartz-plate schedules ([`schedule`]), and quantifies and fits the
//! resulting trace-distance dynamics ([`analysis`], [`synthlab`]).

pub mod analysis;
pub mod channel;
pub mod error;
pub mod schedule;
pub mod spectra;
pub mod synthlab;

pub use error::{Error, Result};
pub use num_complex::Complex64;
