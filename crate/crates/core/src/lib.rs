//! Traversing flows on compact planar domains with boundary.
//!
//! The crate traces a non-vanishing vector field `v` that admits a Lyapunov
//! function `f` (`df(v) > 0`) through a planar region bounded by one outer
//! curve and a number of hole curves, and computes the data such a flow
//! leaves on the boundary: the causality (scattering) map, the Morse
//! stratification of the boundary, and the boundary trace of `f`. From that
//! boundary data alone it rebuilds the trajectory space as a finite graph,
//! the bulk's Euler characteristic and boundary component count, and
//! finite-dimensional surrogates for the function algebras involved.

pub mod algebra;
pub mod expr;
pub mod flowfield;
pub mod geometry;
pub mod holography;
mod integrate;
pub mod report;
pub mod scene;
pub mod svg;
pub mod tracing;
pub mod trajspace;

pub use expr::Expr;
pub use geometry::{BoundaryPoint, Curve, Domain, Point};
