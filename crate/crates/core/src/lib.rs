//! Numerical toolkit for the one-phase Bernoulli free boundary problem
//! driven by the p(x)-Laplacian: grids and fields, variable-exponent space
//! primitives, the penalized energy and its minimizer, free-boundary
//! diagnostics, barrier checks and a verification suite.

// `!(x > 0.0)` is used on purpose so NaN lands in the rejecting branch, and
// index loops over several parallel per-cell arrays read better than zips.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barriers;
mod descent;
pub mod error;
pub mod field;
pub mod freeboundary;
pub mod functional;
pub mod grid;
pub mod optimizer;
pub mod pxharmonic;
pub mod verify;
pub mod vxspace;

pub use error::{Error, Result};
pub use field::{BoundaryData, CoefficientField, ExponentField, Location, ScalarField};
pub use grid::{Grid, Point};
