//! Dense symmetric and SPD matrix primitives.
//!
//! Everything downstream manipulates small dense matrices (graph block
//! Laplacians, SPD states of a sampler), so the types here are thin wrappers
//! around `nalgebra::DMatrix` that enforce two invariants the numerics rely
//! on: symmetry is restored after every operation that can lose it to
//! roundoff, and positive definiteness is checked once at construction and
//! then cached together with the Cholesky factor.

use nalgebra::linalg::{Cholesky, SymmetricEigen};
use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Symmetric matrix. Construction symmetrizes via (A + A^T)/2 and rejects
/// non-finite entries, so downstream code can assume exact symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.is_empty() {
            return Err(Error::invalid("empty matrix"));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite matrix entry"));
        }
        let sym = 0.5 * (&m + m.transpose());
        Ok(SymMatrix { m: sym })
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix {
            m: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix {
            m: DMatrix::identity(d, d),
        }
    }

    pub fn scaled_identity(d: usize, c: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d) * c)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    pub fn norm_fro(&self) -> f64 {
        self.m.norm()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// A + c*B.
    pub fn add_scaled(&self, c: f64, other: &SymMatrix) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::invalid("dimension mismatch in add_scaled"));
        }
        SymMatrix::new(&self.m + c * &other.m)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        SymMatrix::new(&self.m * c)
    }

    /// Frobenius inner product tr(A B).
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.m.dotc(&other.m)
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in ascending
/// order and column-orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomp {
    /// Q f(L) Q^T, symmetrized.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
        let d = self.eigenvalues.len();
        let fl = DMatrix::from_diagonal(&DVector::from_iterator(
            d,
            self.eigenvalues.iter().map(|&x| f(x)),
        ));
        SymMatrix::new(&self.eigenvectors * fl * self.eigenvectors.transpose())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }
}

/// Symmetric eigendecomposition, sorted ascending.
///
/// `SymmetricEigen` deflates early and can leave ~1e-10-scale off-diagonal
/// residue, which is too coarse for the identity checks downstream; a few
/// Jacobi sweeps on Q^T A Q restore machine-precision reconstruction.
pub fn eigh(a: &SymMatrix) -> Result<EigenDecomp> {
    if a.mat().iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite entry passed to eigh"));
    }
    let se = SymmetricEigen::new(a.mat().clone());
    let mut q = se.eigenvectors;
    let mut b = q.transpose() * a.mat() * &q;
    b = 0.5 * (&b + b.transpose());
    jacobi_polish(&mut b, &mut q);

    let d = a.dim();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]));
    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&i| b[(i, i)]));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (k, &i) in order.iter().enumerate() {
        eigenvectors.set_column(k, &q.column(i));
    }
    Ok(EigenDecomp {
        eigenvalues,
        eigenvectors,
    })
}

/// Cyclic Jacobi rotations on the nearly diagonal `b`, accumulated into `q`.
/// Each executed rotation zeroes one off-diagonal pair, so the off-diagonal
/// mass decreases monotonically; from an almost-diagonal start one or two
/// sweeps reach machine precision.
fn jacobi_polish(b: &mut DMatrix<f64>, q: &mut DMatrix<f64>) {
    let d = b.nrows();
    for _sweep in 0..30 {
        let mut off_sq = 0.0;
        for p in 0..d {
            for r in (p + 1)..d {
                off_sq += 2.0 * b[(p, r)] * b[(p, r)];
            }
        }
        if off_sq.sqrt() <= f64::EPSILON * b.norm() * d as f64 {
            break;
        }
        for p in 0..d {
            for r in (p + 1)..d {
                let apr = b[(p, r)];
                if apr.abs() <= 0.5 * f64::EPSILON * (b[(p, p)].abs() + b[(r, r)].abs()) {
                    continue;
                }
                let theta = (b[(r, r)] - b[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let bkp = b[(k, p)];
                    let bkr = b[(k, r)];
                    b[(k, p)] = c * bkp - s * bkr;
                    b[(k, r)] = s * bkp + c * bkr;
                }
                for k in 0..d {
                    let bpk = b[(p, k)];
                    let brk = b[(r, k)];
                    b[(p, k)] = c * bpk - s * brk;
                    b[(r, k)] = s * bpk + c * brk;
                }
                for k in 0..d {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
}

/// Scalar functions lifted to symmetric matrices through the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFunc {
    Exp,
    Log,
    Sqrt,
    InvSqrt,
}

/// Spectral matrix function Q f(L) Q^T. `Log`, `Sqrt` and `InvSqrt` require
/// positive definiteness.
pub fn sym_func(a: &SymMatrix, f: MatrixFunc) -> Result<SymMatrix> {
    let eig = eigh(a)?;
    if f != MatrixFunc::Exp && eig.min_eigenvalue() <= 0.0 {
        return Err(Error::not_pd(format!(
            "matrix function requires positive spectrum, min eigenvalue {:e}",
            eig.min_eigenvalue()
        )));
    }
    match f {
        MatrixFunc::Exp => eig.apply(f64::exp),
        MatrixFunc::Log => eig.apply(f64::ln),
        MatrixFunc::Sqrt => eig.apply(f64::sqrt),
        MatrixFunc::InvSqrt => eig.apply(|x| 1.0 / x.sqrt()),
    }
}

pub fn sym_exp(a: &SymMatrix) -> Result<SymMatrix> {
    sym_func(a, MatrixFunc::Exp)
}

pub fn sym_log(a: &SymMatrix) -> Result<SymMatrix> {
    sym_func(a, MatrixFunc::Log)
}

pub fn sym_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    sym_func(a, MatrixFunc::Sqrt)
}

pub fn sym_invsqrt(a: &SymMatrix) -> Result<SymMatrix> {
    sym_func(a, MatrixFunc::InvSqrt)
}

/// Symmetric positive definite matrix with its Cholesky factorization and
/// log-determinant computed once at construction.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    sym: SymMatrix,
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.sym == other.sym
    }
}

impl SpdMatrix {
    pub fn new(sym: SymMatrix) -> Result<Self> {
        let chol = Cholesky::new(sym.mat().clone())
            .ok_or_else(|| Error::not_pd("Cholesky factorization failed".to_string()))?;
        let logdet = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|x| x.ln())
                .sum::<f64>();
        if !logdet.is_finite() {
            return Err(Error::not_pd("non-finite log-determinant".to_string()));
        }
        Ok(SpdMatrix { sym, chol, logdet })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn scaled_identity(d: usize, c: f64) -> Result<Self> {
        Self::new(SymMatrix::scaled_identity(d, c)?)
    }

    pub fn dim(&self) -> usize {
        self.sym.dim()
    }

    pub fn sym(&self) -> &SymMatrix {
        &self.sym
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        self.sym.mat()
    }

    /// log det, cached from the Cholesky diagonal.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Lower Cholesky factor L with A = L L^T.
    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Solves A X = B through the cached factorization.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// A^{-1}, symmetrized.
    pub fn inverse(&self) -> SymMatrix {
        SymMatrix::new(self.chol.inverse()).expect("inverse of SPD matrix is finite")
    }

    pub fn sqrt(&self) -> Result<SymMatrix> {
        sym_sqrt(&self.sym)
    }

    pub fn invsqrt(&self) -> Result<SymMatrix> {
        sym_invsqrt(&self.sym)
    }

    pub fn trace(&self) -> f64 {
        self.sym.trace()
    }
}
