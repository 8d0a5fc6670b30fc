//! Affine-invariant geometry of the SPD cone.
//!
//! The metric is g_X(U, V) = tr(X^{-1} U X^{-1} V). Tangent vectors are
//! handled in congruence coordinates S = X^{-1/2} U X^{-1/2}, where the
//! metric at X reduces to the Frobenius inner product; geodesics through X
//! become straight lines, which is why the exponential map takes the
//! coordinate S rather than the ambient tangent vector U. The exp-map volume
//! distortion j(S) (log returned by [`exp_jacobian_log`]) is what converts a
//! Gaussian density on coordinates into a density with respect to the
//! Riemannian volume.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{eigh, sym_exp, sym_log, SpdMatrix, SymMatrix};

/// Proposals beyond this coordinate norm would need exp(25)-scale spectral
/// factors; treat them as a failed step instead of overflowing.
pub const MAX_STEP_NORM: f64 = 50.0;

/// Riemannian inner product g_X(U, V) = tr(X^{-1} U X^{-1} V).
pub fn ai_inner(x: &SpdMatrix, u: &SymMatrix, v: &SymMatrix) -> Result<f64> {
    if u.dim() != x.dim() || v.dim() != x.dim() {
        return Err(Error::invalid("tangent dimension mismatch"));
    }
    let xu = x.solve(u.mat());
    let xv = x.solve(v.mat());
    Ok((xu * xv).trace())
}

/// Squared Riemannian norm of a tangent vector.
pub fn ai_norm_sq(x: &SpdMatrix, u: &SymMatrix) -> Result<f64> {
    ai_inner(x, u, u)
}

/// Exponential map in congruence coordinates: X^{1/2} exp(S) X^{1/2}.
pub fn exp_map(x: &SpdMatrix, s: &SymMatrix) -> Result<SpdMatrix> {
    if s.dim() != x.dim() {
        return Err(Error::invalid("coordinate dimension mismatch"));
    }
    let norm = s.norm_fro();
    if norm > MAX_STEP_NORM {
        return Err(Error::StepTooLarge(format!(
            "exp_map coordinate norm {norm:.3e} exceeds {MAX_STEP_NORM}"
        )));
    }
    let sq = x.sqrt()?;
    let es = sym_exp(s)?;
    SpdMatrix::new(SymMatrix::new(sq.mat() * es.mat() * sq.mat())?)
}

/// Inverse of [`exp_map`]: the coordinate log(X^{-1/2} Y X^{-1/2}).
pub fn log_map(x: &SpdMatrix, y: &SpdMatrix) -> Result<SymMatrix> {
    if y.dim() != x.dim() {
        return Err(Error::invalid("dimension mismatch in log_map"));
    }
    let isq = x.invsqrt()?;
    let inner = SymMatrix::new(isq.mat() * y.mat() * isq.mat())?;
    sym_log(&inner)
}

/// Geodesic distance ||log(X^{-1/2} Y X^{-1/2})||_F.
pub fn ai_distance(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    Ok(log_map(x, y)?.norm_fro())
}

/// log(sinh(x)/x), with the leading series term below the branch point so the
/// value stays exact near x = 0. sinh(x)/x >= 1 identically, so the result is
/// clamped at 0 against sub-ulp libm undershoot.
fn log_sinhc(x: f64) -> f64 {
    let v = if x.abs() < 1e-8 {
        (x * x / 6.0).ln_1p()
    } else {
        (x.sinh() / x).ln()
    };
    v.max(0.0)
}

/// Log volume distortion of the exponential map at coordinate S:
/// log j(S) = sum over eigenvalue pairs i<j of log(sinh(g)/g), g = (s_i - s_j)/2.
///
/// j depends only on S (not on the base point), j >= 1, and j(c I) = 1.
pub fn exp_jacobian_log(s: &SymMatrix) -> Result<f64> {
    let eig = eigh(s)?;
    let ev = &eig.eigenvalues;
    let d = s.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            acc += log_sinhc(0.5 * (ev[i] - ev[j]));
        }
    }
    Ok(acc)
}

pub fn coord_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Orthonormal vectorization of a symmetric matrix: diagonal entries map to
/// themselves, off-diagonal entries (i < j, row-major) to sqrt(2) * a_ij, so
/// the Euclidean norm of the coordinates equals the Frobenius norm.
pub fn to_coords(a: &SymMatrix) -> DVector<f64> {
    let d = a.dim();
    let mut v = DVector::zeros(coord_dim(d));
    let mut k = 0;
    for i in 0..d {
        v[k] = a.mat()[(i, i)];
        k += 1;
        for j in (i + 1)..d {
            v[k] = 2f64.sqrt() * a.mat()[(i, j)];
            k += 1;
        }
    }
    v
}

/// Inverse of [`to_coords`].
pub fn from_coords(d: usize, v: &DVector<f64>) -> Result<SymMatrix> {
    if v.len() != coord_dim(d) {
        return Err(Error::invalid(format!(
            "expected {} coordinates for dimension {d}, got {}",
            coord_dim(d),
            v.len()
        )));
    }
    let mut m = nalgebra::DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        m[(i, i)] = v[k];
        k += 1;
        for j in (i + 1)..d {
            let x = v[k] / 2f64.sqrt();
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    SymMatrix::new(m)
}

/// Tangent vector stored in congruence coordinates at a base point:
/// S = X^{-1/2} U X^{-1/2}.
#[derive(Debug, Clone)]
pub struct TangentCoords {
    pub base: SpdMatrix,
    pub s: SymMatrix,
}

impl TangentCoords {
    /// From an ambient tangent vector U at `base`.
    pub fn from_ambient(base: SpdMatrix, u: &SymMatrix) -> Result<Self> {
        if u.dim() != base.dim() {
            return Err(Error::invalid("tangent dimension mismatch"));
        }
        let isq = base.invsqrt()?;
        let s = SymMatrix::new(isq.mat() * u.mat() * isq.mat())?;
        Ok(TangentCoords { base, s })
    }

    /// Back to the ambient tangent vector U = X^{1/2} S X^{1/2}.
    pub fn to_ambient(&self) -> Result<SymMatrix> {
        let sq = self.base.sqrt()?;
        SymMatrix::new(sq.mat() * self.s.mat() * sq.mat())
    }
}
