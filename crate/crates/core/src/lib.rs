//! Fitting, reduction, statistical characterization and synthesis of the
//! multipath propagation model for broadband power-line channel frequency
//! responses.
//!
//! The crate is organized around the fitting pipeline:
//!
//! 1. [`grid`] — discrete frequency/length geometry (grid, maximum path
//!    length, uniform path lattice).
//! 2. [`attenuation`] — robust regression of the log-magnitude response
//!    yielding the attenuation coefficients `a0`, `a1`.
//! 3. [`wls`] — weighted least-squares solve for real path gains on the
//!    conjugate-stacked system.
//! 4. [`decimation`] — iterative dominant-path selection under an NRMSE
//!    budget, producing a compact parameter set.
//! 5. [`synth`] — forward model evaluation and channel metrics.
//! 6. [`stats`] — distribution fitting, goodness-of-fit selection, mixtures,
//!    regressions and gain autocorrelation over fitted populations.
//! 7. [`generator`] — Monte Carlo synthesis of random parameter sets and
//!    channels from fitted distributions.
//! 8. [`corpus`] — file formats, archives and batch plumbing used by the
//!    command-line front end.

pub mod attenuation;
pub mod channel;
pub mod decimation;
pub mod grid;
mod linalg;
pub mod synth;
pub mod wls;

pub use attenuation::AttenuationCoefficients;
pub use channel::ChannelRecord;
pub use decimation::{DecimationConfig, FitReport, MpmParameterSet, PathComponent};
pub use grid::{FrequencyGrid, PathLattice};
pub use synth::ChannelMetrics;
pub use wls::{GainVector, PathSystem};

/// Propagation speed in the cables, m/s.
pub const DEFAULT_PROPAGATION_SPEED: f64 = 2.0e8;
