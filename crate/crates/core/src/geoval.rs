//! Validation experiments for the pullback geometry.
//!
//! The claim under test: the metric score s(D) = tr(X^{-1} D X^{-1} D)
//! predicts the curvature of the energy phi = -log det along D. Rank-one
//! edge probes get three independent measurements: the closed-form score, a
//! second-difference estimate of the curvature, and the change of the
//! stability margin lambda_min(X). Capture curves then compare how much
//! predicted curvature mass the top-k probes hold under the predicted
//! ranking, the finite-difference ranking, and random subsets.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{eigh, SpdMatrix, SymMatrix};
use crate::psdgraph::{
    ModelContext, OrientedGraph, PerturbationDirection, DEFAULT_REGULARIZER_SCALE,
};

/// Monte Carlo draws behind the random capture baseline.
pub const RANDOM_BASELINE_DRAWS: usize = 200;

/// Predicted curvature of phi = -log det at X along the symmetric direction
/// D: tr(X^{-1} D X^{-1} D).
pub fn metric_score(x: &SpdMatrix, delta: &SymMatrix) -> Result<f64> {
    if delta.dim() != x.dim() {
        return Err(Error::invalid("direction dimension mismatch"));
    }
    let z = x.solve(delta.mat());
    Ok((&z * &z).trace())
}

/// Central second difference of f at 0 with step eps: (f(eps) - 2 f(0) + f(-eps)) / eps^2.
/// Exact on quadratics.
fn second_difference(f: impl Fn(f64) -> Result<f64>, eps: f64) -> Result<f64> {
    Ok((f(eps)? - 2.0 * f(0.0)? + f(-eps)?) / (eps * eps))
}

/// Finite-difference curvature of phi = -log det at X along D. Fails with
/// `StepTooLarge` when X +- eps D leaves the cone; callers halve eps and retry.
pub fn fd_curvature(x: &SpdMatrix, delta: &SymMatrix, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    if delta.dim() != x.dim() {
        return Err(Error::invalid("direction dimension mismatch"));
    }
    second_difference(
        |t| {
            let xt = x.sym().add_scaled(t, delta)?;
            let spd = SpdMatrix::new(xt).map_err(|_| {
                Error::StepTooLarge(format!("X {t:+e} * D is not positive definite"))
            })?;
            Ok(-spd.logdet())
        },
        eps,
    )
}

/// [`fd_curvature`] with eps halved until the perturbed matrices are PD.
/// Returns the estimate and the eps actually used.
pub fn fd_curvature_adaptive(x: &SpdMatrix, delta: &SymMatrix, eps: f64) -> Result<(f64, f64)> {
    let mut eps = eps;
    for _ in 0..60 {
        match fd_curvature(x, delta, eps) {
            Ok(v) => return Ok((v, eps)),
            Err(Error::StepTooLarge(_)) => eps *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::StepTooLarge(
        "no positive-definite step found after 60 halvings".to_string(),
    ))
}

/// Change of the stability margin lambda_min(X(W + eps U)) - lambda_min(X(W)).
pub fn stability_margin_change(
    ctx: &ModelContext,
    u: &PerturbationDirection,
    eps: f64,
) -> Result<f64> {
    let lifted = ctx.lift(u)?;
    let perturbed = ctx.x().sym().add_scaled(eps, &lifted)?;
    let before = eigh(ctx.x().sym())?.min_eigenvalue();
    let after = eigh(&perturbed)?.min_eigenvalue();
    Ok(after - before)
}

/// Cumulative score-mass curves indexed by k = 1..=M.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureCurveResult {
    pub metric: Vec<f64>,
    pub oracle: Vec<f64>,
    pub random: Vec<f64>,
}

/// Capture curves over predicted scores.
///
/// - `metric[k-1]`: fraction of total predicted mass held by the k probes
///   with the highest predicted scores.
/// - `oracle[k-1]`: predicted mass of the k probes ranked highest by the
///   oracle scores (mass stays in predicted units, only the ranking changes).
/// - `random[k-1]`: mass of a uniformly random k-subset, averaged over
///   [`RANDOM_BASELINE_DRAWS`] permutations. Prefixes of shared permutations
///   keep each averaged curve monotone.
pub fn capture_curves(
    scores_pred: &[f64],
    scores_oracle: &[f64],
    seed: u64,
) -> Result<CaptureCurveResult> {
    let m = scores_pred.len();
    if m == 0 || scores_oracle.len() != m {
        return Err(Error::invalid(
            "score vectors must be nonempty and equal length",
        ));
    }
    if scores_pred
        .iter()
        .chain(scores_oracle)
        .any(|s| !s.is_finite() || *s < 0.0)
    {
        return Err(Error::invalid("scores must be finite and nonnegative"));
    }
    let total: f64 = scores_pred.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("all predicted scores are zero"));
    }

    let ranked_mass = |order: &[usize]| -> Vec<f64> {
        let mut acc = 0.0;
        order
            .iter()
            .map(|&i| {
                acc += scores_pred[i];
                acc / total
            })
            .collect()
    };

    let desc_order = |scores: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
        idx
    };

    let metric = ranked_mass(&desc_order(scores_pred));
    let oracle = ranked_mass(&desc_order(scores_oracle));

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut random = vec![0.0; m];
    let mut perm: Vec<usize> = (0..m).collect();
    for _ in 0..RANDOM_BASELINE_DRAWS {
        perm.shuffle(&mut rng);
        let mass = ranked_mass(&perm);
        for k in 0..m {
            random[k] += mass[k];
        }
    }
    for v in &mut random {
        *v /= RANDOM_BASELINE_DRAWS as f64;
    }

    Ok(CaptureCurveResult {
        metric,
        oracle,
        random,
    })
}

/// Kendall rank correlation (tau-a): pair concordance count over all pairs,
/// ties contributing zero.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    let m = a.len();
    if m < 2 || b.len() != m {
        return Err(Error::invalid(
            "need two equal-length series of length >= 2",
        ));
    }
    let mut acc = 0i64;
    for i in 0..m {
        for j in (i + 1)..m {
            let da = (a[i] - a[j]).signum();
            let db = (b[i] - b[j]).signum();
            if a[i] != a[j] && b[i] != b[j] {
                acc += if da == db { 1 } else { -1 };
            }
        }
    }
    Ok(acc as f64 / (m * (m - 1) / 2) as f64)
}

fn ranks(a: &[f64]) -> Vec<f64> {
    let m = a.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let mut out = vec![0.0; m];
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && a[idx[j + 1]] == a[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of (average) ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    let m = a.len();
    if m < 2 || b.len() != m {
        return Err(Error::invalid(
            "need two equal-length series of length >= 2",
        ));
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let mean = (m + 1) as f64 / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..m {
        cov += (ra[i] - mean) * (rb[i] - mean);
        va += (ra[i] - mean).powi(2);
        vb += (rb[i] - mean).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::DegenerateVariance(
            "constant ranks in Spearman correlation".to_string(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Configuration of the validation experiment.
#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub graph: OrientedGraph,
    /// Edge weights to probe; drawn at random from `seed` when absent.
    pub weights: Option<crate::psdgraph::EdgeWeights>,
    pub d: usize,
    pub probes: usize,
    pub eps: f64,
    pub regularizer_scale: f64,
    pub seed: u64,
}

impl ValidationConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        ValidationConfig {
            graph: OrientedGraph::cycle(4).expect("cycle(4)"),
            weights: None,
            d: 3,
            probes: 60,
            eps: 1e-4,
            regularizer_scale: DEFAULT_REGULARIZER_SCALE,
            seed,
        }
    }
}

/// One calibration probe: rank-one direction u u^T on one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    pub probe_id: usize,
    pub edge: usize,
    pub u: DVector<f64>,
    pub s_delta: f64,
    pub fd_delta: f64,
    pub eps: f64,
    pub margin_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<CalibrationRow>,
    pub curves: CaptureCurveResult,
    pub max_rel_deviation: f64,
    pub kendall_tau: f64,
    pub margin_spearman: f64,
}

impl ValidationReport {
    pub fn write_calibration_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "probe_id,edge,s_delta,fd_delta,eps")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.probe_id, r.edge, r.s_delta, r.fd_delta, r.eps
            )?;
        }
        Ok(())
    }

    pub fn write_capture_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "k,metric,oracle,random")?;
        for k in 0..self.curves.metric.len() {
            writeln!(
                out,
                "{},{},{},{}",
                k + 1,
                self.curves.metric[k],
                self.curves.oracle[k],
                self.curves.random[k]
            )?;
        }
        Ok(())
    }
}

fn unit_sphere_vector(rng: &mut impl Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Random PSD weight block G G^T / d with G standard normal.
fn random_weight_block(rng: &mut impl Rng, d: usize) -> Result<SymMatrix> {
    let g = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::new(g.transpose() * g / d as f64)
}

/// Runs the full validation experiment: draws weights from the seed, probes
/// the energy with rank-one directions round-robin over the edges, and
/// assembles calibration rows, capture curves and rank statistics.
/// Deterministic given the config.
pub fn run_validation_experiment(config: &ValidationConfig) -> Result<ValidationReport> {
    if config.probes == 0 {
        return Err(Error::invalid("need at least one probe"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let num_edges = config.graph.num_edges();
    let weights = match &config.weights {
        Some(w) => {
            if w.num_edges() != num_edges || w.dim() != config.d {
                return Err(Error::invalid("supplied weights do not match the graph"));
            }
            w.clone()
        }
        None => {
            let blocks = (0..num_edges)
                .map(|_| random_weight_block(&mut rng, config.d))
                .collect::<Result<Vec<_>>>()?;
            crate::psdgraph::EdgeWeights::new(blocks)?
        }
    };
    let n = config.graph.num_vertices() * config.d;
    let r = SpdMatrix::scaled_identity(n, config.regularizer_scale)?;
    let ctx = ModelContext::new(config.graph.clone(), weights, r)?;

    let mut rows = Vec::with_capacity(config.probes);
    for p in 0..config.probes {
        let edge = p % num_edges;
        let u = unit_sphere_vector(&mut rng, config.d);
        let dir = PerturbationDirection::rank_one(num_edges, edge, &u)?;
        let delta = ctx.lift(&dir)?;
        let s_delta = metric_score(ctx.x(), &delta)?;
        let (fd_delta, eps_used) = fd_curvature_adaptive(ctx.x(), &delta, config.eps)?;
        let margin_change = stability_margin_change(&ctx, &dir, config.eps)?;
        rows.push(CalibrationRow {
            probe_id: p,
            edge,
            u,
            s_delta,
            fd_delta,
            eps: eps_used,
            margin_change,
        });
    }

    let pred: Vec<f64> = rows.iter().map(|r| r.s_delta).collect();
    let fd: Vec<f64> = rows.iter().map(|r| r.fd_delta).collect();
    let margins: Vec<f64> = rows.iter().map(|r| r.margin_change).collect();

    let mut curve_rng_seed = ChaCha12Rng::seed_from_u64(config.seed);
    curve_rng_seed.set_stream(1);
    let curves = capture_curves(&pred, &fd, curve_rng_seed.gen())?;

    let max_rel_deviation = rows
        .iter()
        .map(|r| (r.fd_delta - r.s_delta).abs() / r.s_delta)
        .fold(0.0, f64::max);
    let tau = kendall_tau(&pred, &fd)?;
    let margin_spearman = spearman_rho(&margins, &pred)?;

    Ok(ValidationReport {
        rows,
        curves,
        max_rel_deviation,
        kendall_tau: tau,
        margin_spearman,
    })
}
