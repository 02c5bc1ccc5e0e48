//! Anisotropic weighted p-Laplace problems in planar convex cones.
//!
//! The crate solves `−div(w H(∇u)^{p−1} ∇_ξH(∇u)) = f(u) w` on `Σ ∩ B_R`
//! (a convex cone cut by a Wulff ball) by finite-element energy
//! minimization, and then checks the integral identities and inequalities
//! that force the solution to be constant on Wulff shapes: weighted
//! anisotropic isoperimetry, Gauss–Green and Hölder level-set relations,
//! the Pohozaev identity, and monotonicity of the distribution function `K`.

pub mod cli;
pub mod cone;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod finsler;
pub mod geom;
pub mod isoperimetry;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod svg;

pub use cone::{ConeKind, ConeSpec, EdgeTag, PolygonalSet, WeightSpec};
pub use error::{Error, Result};
pub use finsler::{NormKind, NormSpec, WulffBall};
