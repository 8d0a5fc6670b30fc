//! Metropolis-adjusted Langevin sampling on the SPD cone.
//!
//! The target is exp(-Phi) with respect to the affine-invariant Riemannian
//! volume, for the potential
//!
//!   Phi(X) = (lambda/2) d(X, X0)^2 - beta log det X + (kappa/2)(tr X - 1)^2.
//!
//! Proposals live in congruence coordinates at the current state: a drift
//! step M_X plus isotropic Gaussian noise, mapped through Exp_X. The
//! geometry-aware kernel drifts along the Riemannian gradient expressed in
//! those coordinates; the baseline kernel drifts along the Euclidean gradient
//! pushed through the same coordinates, which misjudges the local scale away
//! from the identity. Both share one proposal density, a Gaussian in
//! coordinates divided by the exp-map volume distortion j(S), so both are
//! exact MH chains for the same law and differ only in mixing speed.

use std::io::{BufRead, Write};
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{eigh, sym_log, SpdMatrix, SymMatrix};
use crate::spdgeo::{ai_distance, coord_dim, exp_jacobian_log, exp_map, from_coords, log_map};

/// Scale of the random congruence-coordinate offset applied to each chain's
/// start. Kept modest: the Euclidean-drift baseline freezes permanently when
/// started at small eigenvalues, where its drift overshoots by the squared
/// inverse eigenvalue scale.
const INITIAL_JITTER: f64 = 0.2;

/// Potential parameters. `lambda` pulls toward `x0` in geodesic distance,
/// `beta` rewards volume, `kappa` softly pins the trace at one.
#[derive(Debug, Clone)]
pub struct PotentialParams {
    pub lambda: f64,
    pub beta: f64,
    pub kappa: f64,
    pub x0: SpdMatrix,
}

impl PotentialParams {
    pub fn new(lambda: f64, beta: f64, kappa: f64, x0: SpdMatrix) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("lambda must be positive"));
        }
        if beta < 0.0 || kappa < 0.0 || !beta.is_finite() || !kappa.is_finite() {
            return Err(Error::invalid("beta and kappa must be nonnegative"));
        }
        Ok(PotentialParams {
            lambda,
            beta,
            kappa,
            x0,
        })
    }

    /// lambda 6, beta 1, kappa 5, reference 0.4 I.
    pub fn default_for_dim(d: usize) -> Result<Self> {
        Self::new(40.0, 6.0, 5.0, SpdMatrix::scaled_identity(d, 0.9)?)
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }
}

/// Proposal drift kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// Drift along the Riemannian gradient in congruence coordinates.
    GeomMala,
    /// Drift along the raw Euclidean gradient pushed through the same
    /// coordinates; ignores the metric's rescaling of lengths.
    NaiveEuclidDrift,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::GeomMala => "geom_mala",
            Kernel::NaiveEuclidDrift => "naive_euclid_drift",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "geom_mala" => Ok(Kernel::GeomMala),
            "naive_euclid_drift" => Ok(Kernel::NaiveEuclidDrift),
            other => Err(Error::Parse(format!(
                "unknown kernel `{other}` (expected geom_mala or naive_euclid_drift)"
            ))),
        }
    }
}

/// Multi-chain run configuration.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub h: f64,
    pub n_steps: usize,
    pub n_chains: usize,
    pub burn_in_fraction: f64,
    pub seed: u64,
    pub kernel: Kernel,
    /// Keep per-step state snapshots (needed by gradient-based diagnostics).
    pub record_states: bool,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::invalid("step size h must be positive"));
        }
        if self.n_steps == 0 || self.n_chains == 0 {
            return Err(Error::invalid("need at least one step and one chain"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::invalid("burn_in_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> usize {
        (self.burn_in_fraction * self.n_steps as f64).floor() as usize
    }
}

/// Phi(X).
pub fn potential(x: &SpdMatrix, p: &PotentialParams) -> Result<f64> {
    if x.dim() != p.dim() {
        return Err(Error::invalid("state dimension mismatch"));
    }
    let dist = ai_distance(x, &p.x0)?;
    let tr = x.trace();
    Ok(
        0.5 * p.lambda * dist * dist - p.beta * x.logdet()
            + 0.5 * p.kappa * (tr - 1.0) * (tr - 1.0),
    )
}

/// Riemannian gradient of Phi at X:
///   -lambda X^{1/2} log(X^{-1/2} X0 X^{-1/2}) X^{1/2}
///   - beta X
///   + kappa (tr X - 1) X^2.
pub fn riemannian_grad(x: &SpdMatrix, p: &PotentialParams) -> Result<SymMatrix> {
    if x.dim() != p.dim() {
        return Err(Error::invalid("state dimension mismatch"));
    }
    let sq = x.sqrt()?;
    let isq = x.invsqrt()?;
    let inner = SymMatrix::new(isq.mat() * p.x0.mat() * isq.mat())?;
    let logm = sym_log(&inner)?;
    let dist_term = SymMatrix::new(sq.mat() * logm.mat() * sq.mat())?;

    let mut g = dist_term.scale(-p.lambda)?;
    g = g.add_scaled(-p.beta, x.sym())?;
    if p.kappa != 0.0 {
        let x2 = SymMatrix::new(x.mat() * x.mat())?;
        g = g.add_scaled(p.kappa * (x.trace() - 1.0), &x2)?;
    }
    Ok(g)
}

/// Drift M_X in congruence coordinates for one kernel and step size h.
pub fn drift(x: &SpdMatrix, p: &PotentialParams, h: f64, kernel: Kernel) -> Result<SymMatrix> {
    let g = riemannian_grad(x, p)?;
    let isq = x.invsqrt()?;
    match kernel {
        Kernel::GeomMala => {
            // -h * (coordinates of the Riemannian gradient).
            SymMatrix::new(-h * (isq.mat() * g.mat() * isq.mat()))
        }
        Kernel::NaiveEuclidDrift => {
            // Euclidean gradient X^{-1} G X^{-1}, then the same coordinate map.
            let inv = x.inverse();
            let eg = SymMatrix::new(inv.mat() * g.mat() * inv.mat())?;
            SymMatrix::new(-h * (isq.mat() * eg.mat() * isq.mat()))
        }
    }
}

/// Draws a proposal Y = Exp_X(M_X + sqrt(2h) Z) and returns it with its
/// coordinate S.
pub fn propose<R: Rng + ?Sized>(
    x: &SpdMatrix,
    p: &PotentialParams,
    h: f64,
    kernel: Kernel,
    rng: &mut R,
) -> Result<(SpdMatrix, SymMatrix)> {
    let m = drift(x, p, h, kernel)?;
    let d = x.dim();
    let z = DVector::from_fn(coord_dim(d), |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = from_coords(d, &((2.0 * h).sqrt() * z))?;
    let s = m.add_scaled(1.0, &noise)?;
    let y = exp_map(x, &s)?;
    Ok((y, s))
}

/// Log density of proposing Y from X, with respect to the Riemannian volume
/// at Y: Gaussian in coordinates S = Log_X(Y) divided by the exp-map volume
/// distortion j(S).
pub fn log_proposal_density(
    x: &SpdMatrix,
    y: &SpdMatrix,
    p: &PotentialParams,
    h: f64,
    kernel: Kernel,
) -> Result<f64> {
    let s = log_map(x, y)?;
    let m = drift(x, p, h, kernel)?;
    let diff = s.add_scaled(-1.0, &m)?;
    let n = coord_dim(x.dim()) as f64;
    let log_gauss =
        -0.5 * n * (4.0 * std::f64::consts::PI * h).ln() - diff.norm_fro().powi(2) / (4.0 * h);
    Ok(log_gauss - exp_jacobian_log(&s)?)
}

/// log of the MH acceptance ratio for the move X -> Y (before min with 0).
pub fn acceptance_log_ratio(
    x: &SpdMatrix,
    y: &SpdMatrix,
    p: &PotentialParams,
    h: f64,
    kernel: Kernel,
) -> Result<f64> {
    let num = -potential(y, p)? + log_proposal_density(y, x, p, h, kernel)?;
    let den = -potential(x, p)? + log_proposal_density(x, y, p, h, kernel)?;
    Ok(num - den)
}

/// Outcome of one MH step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SpdMatrix,
    pub accepted: bool,
    /// The proposal or its acceptance ratio failed numerically and the step
    /// was counted as a rejection.
    pub numeric_failure: bool,
}

/// One Metropolis-Hastings step. Numeric failures (steps leaving the cone,
/// non-finite ratios) reject instead of aborting the chain.
pub fn mh_step<R: Rng + ?Sized>(
    x: &SpdMatrix,
    p: &PotentialParams,
    h: f64,
    kernel: Kernel,
    rng: &mut R,
) -> Result<StepOutcome> {
    if x.dim() != p.dim() {
        return Err(Error::invalid("state dimension mismatch"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("step size h must be positive"));
    }
    let rejected = |state: &SpdMatrix, failed: bool| StepOutcome {
        state: state.clone(),
        accepted: false,
        numeric_failure: failed,
    };
    let (y, _s) = match propose(x, p, h, kernel, rng) {
        Ok(v) => v,
        Err(_) => return Ok(rejected(x, true)),
    };
    let log_alpha = match acceptance_log_ratio(x, &y, p, h, kernel) {
        Ok(v) if v.is_nan() => return Ok(rejected(x, true)),
        Ok(v) => v,
        Err(_) => return Ok(rejected(x, true)),
    };
    let accept = log_alpha >= 0.0 || rng.gen::<f64>() < log_alpha.exp();
    if accept {
        Ok(StepOutcome {
            state: y,
            accepted: true,
            numeric_failure: false,
        })
    } else {
        Ok(rejected(x, false))
    }
}

/// X / tr(X): the trace-one representative of the ray through X.
pub fn normalize_trace_one(x: &SpdMatrix) -> Result<SpdMatrix> {
    SpdMatrix::new(x.sym().scale(1.0 / x.trace())?)
}

/// The four scalar observables recorded per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub trace: f64,
    pub logdet: f64,
    pub lambda_min: f64,
    pub dist_sq: f64,
}

pub fn observe(x: &SpdMatrix, p: &PotentialParams) -> Result<Observables> {
    let dist = ai_distance(x, &p.x0)?;
    Ok(Observables {
        trace: x.trace(),
        logdet: x.logdet(),
        lambda_min: eigh(x.sym())?.min_eigenvalue(),
        dist_sq: dist * dist,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub accepted: bool,
    pub obs: Observables,
    /// Nanoseconds elapsed since the chain started, at the end of this step.
    pub wall_ns: u64,
}

/// Full record of one chain. Burn-in records stay in the trace; `burn_in`
/// marks how many leading steps diagnostics should skip.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub chain_id: usize,
    pub kernel: Kernel,
    pub steps: Vec<StepRecord>,
    /// Per-step state snapshots, aligned with `steps` (empty if not recorded).
    pub states: Vec<SpdMatrix>,
    pub burn_in: usize,
    pub wall_secs: f64,
    pub accept_count: usize,
    pub numeric_failures: usize,
}

impl ChainTrace {
    pub fn acceptance_rate(&self) -> f64 {
        self.accept_count as f64 / self.steps.len() as f64
    }

    pub fn post_burn_in(&self) -> &[StepRecord] {
        &self.steps[self.burn_in.min(self.steps.len())..]
    }

    pub fn post_burn_in_states(&self) -> &[SpdMatrix] {
        if self.states.is_empty() {
            &[]
        } else {
            &self.states[self.burn_in.min(self.states.len())..]
        }
    }

    /// Rebuilds the derived fields from loaded records.
    pub fn from_records(
        chain_id: usize,
        kernel: Kernel,
        steps: Vec<StepRecord>,
        states: Vec<SpdMatrix>,
        burn_in: usize,
    ) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("empty chain trace"));
        }
        if !states.is_empty() && states.len() != steps.len() {
            return Err(Error::invalid("state snapshots misaligned with steps"));
        }
        let accept_count = steps.iter().filter(|s| s.accepted).count();
        let wall_secs = steps.last().map(|s| s.wall_ns as f64 * 1e-9).unwrap_or(0.0);
        Ok(ChainTrace {
            chain_id,
            kernel,
            steps,
            states,
            burn_in,
            wall_secs,
            accept_count,
            numeric_failures: 0,
        })
    }
}

fn rng_for_chain(seed: u64, kernel: Kernel, chain_id: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let kernel_index: u64 = match kernel {
        Kernel::GeomMala => 0,
        Kernel::NaiveEuclidDrift => 1,
    };
    rng.set_stream((kernel_index << 32) | chain_id as u64);
    rng
}

fn run_single_chain(
    p: &PotentialParams,
    cfg: &SamplerConfig,
    chain_id: usize,
) -> Result<ChainTrace> {
    let mut rng = rng_for_chain(cfg.seed, cfg.kernel, chain_id);
    let d = p.dim();

    // Overdispersed start: reference point pushed along a random coordinate
    // direction.
    let z = DVector::from_fn(coord_dim(d), |_, _| rng.sample::<f64, _>(StandardNormal));
    let s0 = from_coords(d, &(INITIAL_JITTER * z))?;
    let mut x = exp_map(&p.x0, &s0)?;

    let mut steps = Vec::with_capacity(cfg.n_steps);
    let mut states = Vec::with_capacity(if cfg.record_states { cfg.n_steps } else { 0 });
    let mut accept_count = 0usize;
    let mut numeric_failures = 0usize;
    let t0 = Instant::now();
    for step in 0..cfg.n_steps {
        let out = mh_step(&x, p, cfg.h, cfg.kernel, &mut rng)?;
        x = out.state;
        accept_count += out.accepted as usize;
        numeric_failures += out.numeric_failure as usize;
        let obs = observe(&x, p)?;
        steps.push(StepRecord {
            step,
            accepted: out.accepted,
            obs,
            wall_ns: t0.elapsed().as_nanos() as u64,
        });
        if cfg.record_states {
            states.push(x.clone());
        }
    }
    Ok(ChainTrace {
        chain_id,
        kernel: cfg.kernel,
        steps,
        states,
        burn_in: cfg.burn_in_steps(),
        wall_secs: t0.elapsed().as_secs_f64(),
        accept_count,
        numeric_failures,
    })
}

/// Runs `n_chains` independent chains in parallel. Chain c draws from the
/// ChaCha stream (kernel, c) of `seed`, so observables are bit-reproducible
/// for a fixed (seed, config) regardless of scheduling; wall-clock fields are
/// the only nondeterministic content.
pub fn run_chains(p: &PotentialParams, cfg: &SamplerConfig) -> Result<Vec<ChainTrace>> {
    cfg.validate()?;
    if p.x0.dim() == 0 {
        return Err(Error::invalid("empty reference point"));
    }
    let mut results: Vec<Option<Result<ChainTrace>>> = Vec::new();
    results.resize_with(cfg.n_chains, || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chain_id in 0..cfg.n_chains {
            handles.push(scope.spawn(move || run_single_chain(p, cfg, chain_id)));
        }
        for (chain_id, handle) in handles.into_iter().enumerate() {
            results[chain_id] = Some(
                handle
                    .join()
                    .unwrap_or_else(|_| Err(Error::invalid(format!("chain {chain_id} panicked")))),
            );
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("all chains joined"))
        .collect()
}

/// Writes one chain as CSV: `step,accepted,trace,logdet,lambda_min,dist_sq,wall_ns`.
pub fn write_trace_csv<W: Write>(trace: &ChainTrace, out: &mut W) -> Result<()> {
    writeln!(out, "step,accepted,trace,logdet,lambda_min,dist_sq,wall_ns")?;
    for r in &trace.steps {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.accepted as u8,
            r.obs.trace,
            r.obs.logdet,
            r.obs.lambda_min,
            r.obs.dist_sq,
            r.wall_ns
        )?;
    }
    Ok(())
}

/// Reads the format written by [`write_trace_csv`].
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<StepRecord>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty trace file".to_string()))??;
    if header.trim() != "step,accepted,trace,logdet,lambda_min,dist_sq,wall_ns" {
        return Err(Error::Parse(format!("unexpected trace header `{header}`")));
    }
    let mut records = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!(
                "trace line {}: expected 7 fields, got {}",
                no + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("trace line {}: bad {what} `{s}`", no + 2)))
        };
        records.push(StepRecord {
            step: fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("trace line {}: bad step", no + 2)))?,
            accepted: match fields[1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse(format!(
                        "trace line {}: bad accepted flag `{other}`",
                        no + 2
                    )))
                }
            },
            obs: Observables {
                trace: parse_f(fields[2], "trace")?,
                logdet: parse_f(fields[3], "logdet")?,
                lambda_min: parse_f(fields[4], "lambda_min")?,
                dist_sq: parse_f(fields[5], "dist_sq")?,
            },
            wall_ns: fields[6]
                .parse()
                .map_err(|_| Error::Parse(format!("trace line {}: bad wall_ns", no + 2)))?,
        });
    }
    Ok(records)
}

/// Writes per-step state snapshots: `step` plus the upper-triangular entries
/// of X in row-major order.
pub fn write_states_csv<W: Write>(trace: &ChainTrace, out: &mut W) -> Result<()> {
    if trace.states.is_empty() {
        return Err(Error::invalid("trace has no recorded states"));
    }
    let d = trace.states[0].dim();
    let mut header = String::from("step");
    for i in 0..d {
        for j in i..d {
            header.push_str(&format!(",x{i}{j}"));
        }
    }
    writeln!(out, "{header}")?;
    for (r, x) in trace.steps.iter().zip(&trace.states) {
        let mut line = r.step.to_string();
        for i in 0..d {
            for j in i..d {
                line.push_str(&format!(",{}", x.mat()[(i, j)]));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads the format written by [`write_states_csv`].
pub fn read_states_csv<R: BufRead>(input: R, d: usize) -> Result<Vec<SpdMatrix>> {
    let mut lines = input.lines();
    let _header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty states file".to_string()))??;
    let per_row = d * (d + 1) / 2;
    let mut states = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != per_row + 1 {
            return Err(Error::Parse(format!(
                "states line {}: expected {} fields, got {}",
                no + 2,
                per_row + 1,
                fields.len()
            )));
        }
        let mut m = nalgebra::DMatrix::zeros(d, d);
        let mut k = 1;
        for i in 0..d {
            for j in i..d {
                let x: f64 = fields[k].parse().map_err(|_| {
                    Error::Parse(format!("states line {}: bad entry `{}`", no + 2, fields[k]))
                })?;
                m[(i, j)] = x;
                m[(j, i)] = x;
                k += 1;
            }
        }
        states.push(SpdMatrix::from_matrix(m)?);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spdgeo::{ai_inner, to_coords};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn test_state(seed: u64) -> SpdMatrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        SpdMatrix::from_matrix(&g * g.transpose() * 0.2 + DMatrix::identity(3, 3) * 0.3).unwrap()
    }

    #[test]
    fn potential_at_reference_point() {
        let p = PotentialParams::default_for_dim(3).unwrap();
        // At X = X0 the distance term vanishes: Phi = -beta logdet + kappa/2 (tr-1)^2.
        let expected = -6.0 * 3.0 * 0.9f64.ln() + 2.5 * (2.7f64 - 1.0).powi(2);
        assert_relative_eq!(
            potential(&p.x0, &p).unwrap(),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn gradient_pairs_with_directional_derivatives() {
        // Each term of the potential separately: the Riemannian gradient must
        // reproduce Euclidean directional derivatives through the metric.
        let x = test_state(1);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let terms = [
            PotentialParams::new(6.0, 0.0, 0.0, SpdMatrix::scaled_identity(3, 0.4).unwrap())
                .unwrap(),
            PotentialParams::new(1e-12, 1.0, 0.0, SpdMatrix::scaled_identity(3, 0.4).unwrap())
                .unwrap(),
            PotentialParams::new(1e-12, 0.0, 5.0, SpdMatrix::scaled_identity(3, 0.4).unwrap())
                .unwrap(),
        ];
        for p in &terms {
            for _ in 0..5 {
                let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let u = SymMatrix::new(g).unwrap();
                let u = u.scale(1.0 / u.norm_fro()).unwrap();
                let grad = riemannian_grad(&x, p).unwrap();
                let paired = ai_inner(&x, &grad, &u).unwrap();
                let eps = 1e-5;
                let phi_at = |t: f64| {
                    let xt = SpdMatrix::new(x.sym().add_scaled(t, &u).unwrap()).unwrap();
                    potential(&xt, p).unwrap()
                };
                let fd = (phi_at(eps) - phi_at(-eps)) / (2.0 * eps);
                assert_relative_eq!(paired, fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn kernels_agree_at_the_identity() {
        // At X = I the congruence map is trivial and both drifts coincide.
        let p = PotentialParams::default_for_dim(3).unwrap();
        let x = SpdMatrix::scaled_identity(3, 1.0).unwrap();
        let geom = drift(&x, &p, 0.05, Kernel::GeomMala).unwrap();
        let naive = drift(&x, &p, 0.05, Kernel::NaiveEuclidDrift).unwrap();
        assert!((geom.mat() - naive.mat()).norm() <= 1e-12);
    }

    #[test]
    fn proposal_mean_matches_drift() {
        let p = PotentialParams::default_for_dim(3).unwrap();
        let x = test_state(3);
        let h = 0.05;
        let m = drift(&x, &p, h, Kernel::GeomMala).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let n_draws = 100_000;
        let mut mean = DVector::zeros(6);
        for _ in 0..n_draws {
            let (_, s) = propose(&x, &p, h, Kernel::GeomMala, &mut rng).unwrap();
            mean += to_coords(&s);
        }
        mean /= n_draws as f64;
        let target = to_coords(&m);
        let se = (2.0 * h / n_draws as f64).sqrt();
        for i in 0..6 {
            assert!(
                (mean[i] - target[i]).abs() <= 4.0 * se,
                "coordinate {i}: {} vs {}",
                mean[i],
                target[i]
            );
        }
    }

    #[test]
    fn detailed_balance_holds_for_both_kernels() {
        let p = PotentialParams::default_for_dim(3).unwrap();
        let h = 0.05;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for kernel in [Kernel::GeomMala, Kernel::NaiveEuclidDrift] {
            for _ in 0..20 {
                let x = test_state(rng.gen());
                let (y, _) = propose(&x, &p, h, kernel, &mut rng).unwrap();
                let fwd = -potential(&x, &p).unwrap()
                    + log_proposal_density(&x, &y, &p, h, kernel).unwrap()
                    + acceptance_log_ratio(&x, &y, &p, h, kernel)
                        .unwrap()
                        .min(0.0);
                let bwd = -potential(&y, &p).unwrap()
                    + log_proposal_density(&y, &x, &p, h, kernel).unwrap()
                    + acceptance_log_ratio(&y, &x, &p, h, kernel)
                        .unwrap()
                        .min(0.0);
                assert!(
                    (fwd - bwd).abs() <= 1e-10 * fwd.abs().max(1.0),
                    "{kernel:?}: {fwd} vs {bwd}"
                );
            }
        }
    }

    #[test]
    fn huge_steps_reject_without_aborting() {
        let p = PotentialParams::default_for_dim(3).unwrap();
        let x = test_state(6);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let out = mh_step(&x, &p, 1e6, Kernel::GeomMala, &mut rng).unwrap();
        assert!(!out.accepted);
        assert!(out.numeric_failure);
        assert_eq!(&out.state, &x);
    }

    #[test]
    fn trace_one_normalization() {
        let x = test_state(8);
        let y = normalize_trace_one(&x).unwrap();
        assert!((y.trace() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn chains_are_reproducible_and_chain_dependent() {
        let p = PotentialParams::default_for_dim(3).unwrap();
        let cfg = SamplerConfig {
            h: 0.05,
            n_steps: 200,
            n_chains: 2,
            burn_in_fraction: 0.5,
            seed: 99,
            kernel: Kernel::GeomMala,
            record_states: true,
        };
        let a = run_chains(&p, &cfg).unwrap();
        let b = run_chains(&p, &cfg).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!(ta.accept_count, tb.accept_count);
            for (ra, rb) in ta.steps.iter().zip(&tb.steps) {
                assert_eq!(ra.obs, rb.obs);
                assert_eq!(ra.accepted, rb.accepted);
            }
        }
        assert_ne!(
            a[0].steps.last().unwrap().obs,
            a[1].steps.last().unwrap().obs
        );
        assert_eq!(a[0].burn_in, 100);
        assert_eq!(a[0].states.len(), 200);
        let wall_monotone = a[0].steps.windows(2).all(|w| w[1].wall_ns >= w[0].wall_ns);
        assert!(wall_monotone);
    }

    #[test]
    fn concentrated_distance_target_matches_chi_square_mean() {
        // With beta = kappa = 0 the squared distance is asymptotically
        // chi^2_6 / lambda; at large lambda the Gaussian approximation is
        // tight, so the pooled mean must sit near 6 / lambda.
        let lambda = 60.0;
        let p = PotentialParams::new(
            lambda,
            0.0,
            0.0,
            SpdMatrix::scaled_identity(3, 0.4).unwrap(),
        )
        .unwrap();
        let cfg = SamplerConfig {
            h: 0.02,
            n_steps: 6000,
            n_chains: 4,
            burn_in_fraction: 0.5,
            seed: 12,
            kernel: Kernel::GeomMala,
            record_states: false,
        };
        let traces = run_chains(&p, &cfg).unwrap();
        let pooled: Vec<f64> = traces
            .iter()
            .flat_map(|t| t.post_burn_in().iter().map(|r| r.obs.dist_sq))
            .collect();
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let expected = 6.0 / lambda;
        assert!(
            (mean - expected).abs() <= 0.1 * expected,
            "mean {mean} vs {expected}"
        );
    }

    #[test]
    fn trace_csv_round_trips() {
        let p = PotentialParams::default_for_dim(3).unwrap();
        let cfg = SamplerConfig {
            h: 0.05,
            n_steps: 50,
            n_chains: 1,
            burn_in_fraction: 0.2,
            seed: 5,
            kernel: Kernel::NaiveEuclidDrift,
            record_states: true,
        };
        let traces = run_chains(&p, &cfg).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&traces[0], &mut buf).unwrap();
        let records = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(records, traces[0].steps);

        let mut sbuf = Vec::new();
        write_states_csv(&traces[0], &mut sbuf).unwrap();
        let states = read_states_csv(sbuf.as_slice(), 3).unwrap();
        assert_eq!(states.len(), 50);
        for (a, b) in states.iter().zip(&traces[0].states) {
            assert_eq!(a.mat(), b.mat());
        }
    }
}
