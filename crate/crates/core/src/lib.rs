//! Extremal small-hole domains for the first Laplace–Beltrami eigenvalue.
//!
//! The crate is organised bottom-up:
//!
//! * [`spherical`]: quadrature and harmonic analysis on `S^{n-1}`, exact monomial integrals
//!   and the appendix identity suite.
//! * [`exterior`]: bounded harmonic extensions outside the unit ball and the inward blend.
//! * [`dtn`]: the radial profile `φ₁` and the boundary operator `H`.
//! * [`geometry`]: curvature tensors, normal-coordinate expansions and model manifolds.
//! * [`green`]: local Green-function expansions and the flux constants.
//! * [`ansatz`]: the approximate eigenfunction and the boundary-mismatch fit.
//! * [`eigensolve`]: grid eigensolver for `M ∖ Ω`, flux traces and shape derivatives.
//! * [`extremal`]: the flux operator `F` and the modified Newton loop.
//! * [`cli`]: the experiment runner behind the `exdom` binary.
//!
//! The analytic modules are generic over [`Real`] (`f32` or `f64`); the grid solvers work in
//! `f64`. Concrete `f64` aliases are exported at the crate root.

pub mod ansatz;
pub mod cli;
pub mod dtn;
pub mod eigensolve;
mod error;
pub mod exterior;
pub mod extremal;
pub mod geometry;
pub mod green;
pub mod poly;
mod scalar;
pub mod spherical;

pub use error::{Error, Result};
pub use scalar::Real;

/// `SphereFn` over `f64`.
pub type SphereFn64 = spherical::SphereFn<f64>;
/// `SphereGrid` over `f64`.
pub type SphereGrid64 = spherical::SphereGrid<f64>;
/// `ExteriorHarmonic` over `f64`.
pub type ExteriorHarmonic64 = exterior::ExteriorHarmonic<f64>;
/// `RadialProfile` over `f64`.
pub type RadialProfile64 = dtn::RadialProfile<f64>;
/// `CurvatureData` over `f64`.
pub type CurvatureData64 = geometry::CurvatureData<f64>;
/// `GreenExpansion` over `f64`.
pub type GreenExpansion64 = green::GreenExpansion<f64>;
/// `SphereFn` over `f32`.
pub type SphereFn32 = spherical::SphereFn<f32>;
/// `CurvatureData` over `f32`.
pub type CurvatureData32 = geometry::CurvatureData<f32>;
