//! Shared helpers for the acceptance suite: seeded random inputs and the
//! independent oracles the library is checked against.

use nalgebra::{DMatrix, DVector};
use psdlab::linalg::{sym_exp, SpdMatrix, SymMatrix};
use psdlab::psdgraph::OrientedGraph;
use psdlab::spdgeo::{coord_dim, exp_map, from_coords, to_coords};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn random_sym(rng: &mut ChaCha12Rng, d: usize, scale: f64) -> SymMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::new((&g + g.transpose()) * (0.5 * scale)).unwrap()
}

/// SPD matrix exp(S) with S random symmetric of the given scale, so the
/// eigenvalues stay within a controlled multiplicative band around 1.
pub fn random_spd(rng: &mut ChaCha12Rng, d: usize, spread: f64) -> SpdMatrix {
    let s = random_sym(rng, d, spread);
    SpdMatrix::new(sym_exp(&s).unwrap()).unwrap()
}

/// Random PSD weight block G^T G scaled to the requested magnitude.
pub fn random_psd_block(rng: &mut ChaCha12Rng, d: usize, scale: f64) -> SymMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::new(g.transpose() * g * (scale / d as f64)).unwrap()
}

/// Finite-difference volume oracle for the exponential map.
///
/// Differentiates S -> exp_map(X, S) columnwise in the orthonormal
/// coordinates of [`to_coords`], then multiplies the coordinate Jacobian
/// determinant by the affine-invariant volume density sqrt(det G(Y)) at the
/// image point, G_kl = tr(Y^-1 E_k Y^-1 E_l). The result is the density of
/// the pulled-back Riemannian volume with respect to flat Lebesgue measure
/// in S, which the closed-form product over eigenvalue gaps must match.
pub fn fd_exp_map_volume(x: &SpdMatrix, s: &SymMatrix, eps: f64) -> f64 {
    let d = x.dim();
    let n = coord_dim(d);
    let basis: Vec<SymMatrix> = (0..n)
        .map(|k| {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            from_coords(d, &e).unwrap()
        })
        .collect();

    let mut jac = DMatrix::<f64>::zeros(n, n);
    for (l, dir) in basis.iter().enumerate() {
        let plus = exp_map(x, &s.add_scaled(eps, dir).unwrap()).unwrap();
        let minus = exp_map(x, &s.add_scaled(-eps, dir).unwrap()).unwrap();
        let col = SymMatrix::new((plus.mat() - minus.mat()) / (2.0 * eps)).unwrap();
        jac.set_column(l, &to_coords(&col));
    }

    let y = exp_map(x, s).unwrap();
    let y_inv = y.inverse();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        for l in k..n {
            let v = (y_inv.mat() * basis[k].mat() * y_inv.mat() * basis[l].mat()).trace();
            gram[(k, l)] = v;
            gram[(l, k)] = v;
        }
    }
    jac.determinant().abs() * gram.determinant().sqrt()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Spanning tree count by exhaustive enumeration of (n-1)-edge subsets,
/// keeping the acyclic ones. Only meant for tiny graphs.
pub fn count_spanning_trees_brute(graph: &OrientedGraph) -> u64 {
    let n = graph.num_vertices();
    let edges = graph.edges();
    let m = edges.len();
    assert!(
        m < 20,
        "enumeration oracle is exponential in the edge count"
    );
    let mut count = 0u64;
    for mask in 0u32..(1u32 << m) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        let mut acyclic = true;
        for (e, &(a, b)) in edges.iter().enumerate() {
            if (mask >> e) & 1 == 0 {
                continue;
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                acyclic = false;
                break;
            }
            parent[ra] = rb;
        }
        // n-1 edges and no cycle means the subset spans every vertex.
        if acyclic {
            count += 1;
        }
    }
    count
}
