//! Schrödinger bridges, their Madelung wave functions, and numerical checks of
//! the complex-potential Schrödinger equation they satisfy.
//!
//! Everything lives on uniform 1D or 2D grids with second-order finite
//! differences and trapezoidal quadrature.

// `!(x > 0.0)` is how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod calculus;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod madelung;
pub mod manufactured;
pub mod output;
pub mod potentials;
pub mod problem;
pub mod verifier;

pub use error::{Error, Result};
pub use fields::{
    eval_interp, normalize_density, ComplexField, GainField, Grid, MatrixField, OnGrid,
    ScalarField, TimeGrid, TimeSeries, VectorField,
};

/// Evaluate `f` on `0..n`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub(crate) fn par_collect<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_collect<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}
