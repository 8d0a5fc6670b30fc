//! Log-determinant energies on PSD-weighted graphs, the affine-invariant
//! geometry of the SPD cone, and a geometry-aware MALA sampler with a full
//! MCMC diagnostics stack.
//!
//! Module map:
//! - [`linalg`]: dense symmetric/SPD primitives (eigendecomposition, matrix
//!   functions, Cholesky log-determinants).
//! - [`psdgraph`]: oriented graphs with PSD edge weights, the block Laplacian,
//!   the stabilized log-det energy and its first two directional derivatives.
//! - [`spdgeo`]: exp/log maps, distances and the exp-map Jacobian for the
//!   affine-invariant metric on SPD matrices.
//! - [`geoval`]: curvature-calibration and capture-curve experiments that
//!   validate the pullback metric against finite differences.
//! - [`sampler`]: intrinsic MALA on the SPD cone plus a Euclidean-drift
//!   baseline, with reproducible multi-chain drivers.
//! - [`diagnostics`]: split R-hat, ESS, Poincare proxies, MCSE/z-scores and
//!   distribution-comparison exports.
//! - [`config`]: flat key=value experiment configuration shared with the CLI.

// Validations use `!(x > 0.0)` on purpose: the negation also rejects NaN,
// which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod geoval;
pub mod linalg;
pub mod psdgraph;
pub mod sampler;
pub mod spdgeo;

pub use error::{Error, Result};
pub use linalg::{EigenDecomp, SpdMatrix, SymMatrix};
