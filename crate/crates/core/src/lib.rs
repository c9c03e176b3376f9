//! Evaluation of singular and nearly singular 2D layer potentials using
//! adaptive quadrature by expansion (AQBX) on composite Gauss-Legendre panels.
//!
//! The library covers the full pipeline: panelization of closed analytic
//! curves, Laplace double-layer and Helmholtz combined-field kernels, local
//! expansions with automatic selection of expansion order and upsampling
//! rate from a target tolerance, a priori estimates of the nearly singular
//! quadrature error that drive the adaptivity, and a Nyström/GMRES solver
//! for the associated Dirichlet boundary integral equations.

pub mod aqbx;
pub mod density;
pub mod estimates;
pub mod geometry;
pub mod kernels;
pub mod solver;
pub mod special;

mod error;

pub use error::Error;

/// Shorthand used throughout the crate.
pub type Complex = num_complex::Complex64;

pub type Result<T> = std::result::Result<T, Error>;
