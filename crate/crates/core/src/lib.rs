//! Spectral and Monte Carlo laboratory for the harmonic-oscillator NLS.
//!
//! The crate is organized bottom-up: [`quadrature`] and [`hermite_basis`]
//! provide the Hermite eigenbasis of `H = -Δ + |x|²`, [`spectral_ops`] the
//! norms and linear flows, [`lens_free`] the lens transform and an independent
//! free propagator, [`picard_solver`] the fixed-point solver for the weighted
//! harmonic NLS, and [`random_ensembles`] / [`proba_lab`] the randomized data
//! and the probabilistic checks.

pub mod acceptance;
pub mod error;
pub mod grid_cache;
pub mod hermite_basis;
pub mod lens_free;
pub mod parallel;
pub mod picard_solver;
pub mod proba_lab;
pub mod quadrature;
pub mod random_ensembles;
pub mod report;
pub mod spectral_ops;
pub mod stats;

pub use error::{LabError, Result};
pub use hermite_basis::{build_basis, BasisGrid, MultiIndex};
pub use spectral_ops::SpectralField;
