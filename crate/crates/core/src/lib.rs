//! Delay-Doppler unified pilot simulation for OFDM-based integrated
//! sensing and communications.
//!
//! The crate builds one waveform that serves two receivers: a 2D pilot
//! constructed in the delay-Doppler plane whose time-frequency transform
//! is a comb DMRS. The sensing receiver detects targets by 2D correlation
//! against shifted pilot replicas with a magnitude-ratio fractional
//! Doppler refinement; the communication receiver does comb channel
//! estimation and MMSE single-tap equalization.
//!
//! Core math is generic over the scalar type ([`Scalar`]: f32 or f64);
//! concrete f64 aliases are exported at the crate root.

pub mod commsrx;
pub mod error;
pub mod grid;
pub mod harness;
pub mod channel;
pub mod frame;
pub mod metrics;
pub mod pilot;
pub mod scalar;
pub mod sensing;
pub mod sequences;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64 grid, the default precision of the simulation chain.
pub type Grid64 = grid::ComplexGrid<f64>;
/// f32 grid.
pub type Grid32 = grid::ComplexGrid<f32>;
/// f64 pilot.
pub type Pilot64 = pilot::Pilot2D<f64>;
/// f32 pilot.
pub type Pilot32 = pilot::Pilot2D<f32>;
