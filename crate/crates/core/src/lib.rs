//! Space-time finite elements for the heat equation driven by a point
//! source that moves along a curve, together with the discrete optimal
//! control problem for the source intensity.
//!
//! The discretization is piecewise constant in time (dG(0)) and piecewise
//! linear in space (cG(1)) on triangulations of a convex polygon. The
//! control is never discretized explicitly: its optimal value is recovered
//! from the discrete adjoint trace along the curve by a pointwise
//! projection onto the admissible box.
//!
//! Module map:
//! - [`mesh`]: triangulations, uniform refinement and point location
//! - [`sparse`]: CSR storage and preconditioned conjugate gradients
//! - [`fespace`]: P1 assembly, projections, point functionals, smoothed delta
//! - [`timeline`]: time partitions, source curves, controls, weights
//! - [`heat`]: forward, adjoint and regularized dual solvers, error functionals
//! - [`ocp`]: reduced functional, gradient and the box-constrained solvers
//! - [`cli`]: expression language, config files, solve/study/verify drivers

pub mod cli;
pub mod error;
pub mod fespace;
pub mod heat;
pub mod mesh;
pub mod ocp;
pub mod quadrature;
pub mod sparse;
pub mod timeline;

pub use error::{Error, Result};
pub use mesh::{Mesh, Point};
pub use sparse::CsrMatrix;
