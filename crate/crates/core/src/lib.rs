//! Parametric-sideband single-photon emission: device physics, pulse shaping,
//! open-system dynamics, heterodyne detection and moment-based tomography.
//!
//! All frequencies and rates are angular (rad/s) and all times are seconds
//! unless a name says otherwise. Flux is in units of the flux quantum.

pub mod config;
pub mod detection;
pub mod device;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod field;
pub mod io;
pub mod linalg;
pub mod numerics;
pub mod pulse;
pub mod runners;
pub mod tomography;

pub use error::{Error, Result};

/// `2 pi`, used to convert ordinary frequencies to angular ones.
pub const TAU: f64 = std::f64::consts::TAU;

/// Ordinary frequency in Hz to angular frequency in rad/s.
pub fn hz(f: f64) -> f64 {
    TAU * f
}
