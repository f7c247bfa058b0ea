//! Virtual instrument for optically detected magnetic resonance of NV centers
//! in diamond: spin Hamiltonian, swept lock-in measurement, spectral fitting,
//! vector magnetometry and multiphoton raster-scan imaging.
//!
//! Numeric code is generic over [`num::Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

// `!(x > 0.0)` is the NaN-rejecting form throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fit;
pub mod io;
pub mod linalg;
pub mod lm;
pub mod magnetometry;
pub mod num;
pub mod scan;
pub mod signal;
pub mod spin;

pub use num::Real;

pub type Dip = signal::DipSpec<f64>;
pub type Dip32 = signal::DipSpec<f32>;
pub type Trace = signal::SpectrumTrace<f64>;
pub type Trace32 = signal::SpectrumTrace<f32>;
pub type Params = spin::HamiltonianParams<f64>;
pub type Params32 = spin::HamiltonianParams<f32>;
pub type Field = spin::MagneticField<f64>;
pub type Field32 = spin::MagneticField<f32>;
pub type Fit = fit::FitResult<f64>;
pub type Fit32 = fit::FitResult<f32>;
pub type Estimate = magnetometry::FieldEstimate<f64>;
pub type Estimate32 = magnetometry::FieldEstimate<f32>;
pub type VoxelPhantom = scan::Phantom<f64>;
pub type VoxelPhantom32 = scan::Phantom<f32>;
