//! Radial finite elements for the mixed local-nonlocal Dirichlet problem
//!
//! ```text
//! -Δu + (-Δ)^s u + λu = |u|^{p-2}u  in the unit ball B ⊂ ℝ^N,  u = 0 outside B
//! ```
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix the scalar. Verification and caching work in `f64`.

// NaN-rejecting range checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod cache;
pub mod discretization;
pub mod error;
pub mod extension;
pub mod ground_state;
pub mod linalg;
pub mod quadrature;
pub mod scalar;
pub mod spectral;
pub mod special;
pub mod verification;

pub use error::{Error, Result};

pub type Mesh = discretization::RadialMesh<f64>;
pub type Profile = discretization::RadialFunction<f64>;
pub type Operator = discretization::SectorOperator<f64>;
pub type Kernel = special::KernelSpec<f64>;
pub type Params = ground_state::ProblemParams<f64>;
pub type Solution = ground_state::GroundStateSolution<f64>;
pub type Spectrum = spectral::SpectrumResult<f64>;

pub type Mesh32 = discretization::RadialMesh<f32>;
pub type Profile32 = discretization::RadialFunction<f32>;
pub type Operator32 = discretization::SectorOperator<f32>;
pub type Kernel32 = special::KernelSpec<f32>;
pub type Params32 = ground_state::ProblemParams<f32>;
pub type Solution32 = ground_state::GroundStateSolution<f32>;
pub type Spectrum32 = spectral::SpectrumResult<f32>;
