//! Simulation and inverse design of spatially structured photon-pair sources.
//!
//! The forward model propagates an ensemble of vacuum-seeded signal/idler
//! field quartets through a quasi-phase-matched nonlinear crystal with a
//! split-step Fourier scheme, then estimates normally ordered correlations
//! (singles, pair amplitude, coincidences) by projecting the ensemble onto
//! detection mode sets. The inverse path differentiates the whole pipeline
//! with a discrete adjoint sweep so pump and crystal parameters can be
//! trained against coincidence or density-matrix targets.
//!
//! Modules mirror the physical pipeline:
//!
//! * [`grid`]: transverse grid, wavenumbers, spectral propagation phases
//! * [`modes`]: Laguerre- and Hermite-Gaussian mode synthesis and projection
//! * [`medium`]: pump/crystal parameterization, coupling, poling export
//! * [`propagator`]: vacuum sampling and the coupled split-step scheme
//! * [`observables`]: ensemble projections, correlation estimators, oracle
//! * [`tomography`]: projective qudit tomography and reconstruction
//! * [`inverse`]: losses, adjoint gradients, optimizer, training loop
//! * [`config`] / [`run`]: run configuration, scenario presets, commands

pub mod config;
pub mod error;
pub mod fft;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod medium;
pub mod modes;
pub mod observables;
pub mod pool;
pub mod propagator;
pub mod rng;
// pub mod run;
pub mod tomography;
// pub mod validate;

mod dual;

pub use error::SpdcError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SpdcError>;
