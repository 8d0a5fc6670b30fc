//! Chain diagnostics: split R-hat, Geyer effective sample size, an empirical
//! Poincare-quotient proxy for the spectral gap, Monte Carlo standard errors,
//! cross-method z-scores, and ECDF/histogram exports.
//!
//! Everything operates on post-burn-in trace data and is pure; callers decide
//! how chains are grouped.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{eigh, SpdMatrix, SymMatrix};
use crate::sampler::{ChainTrace, Kernel, Observables};
use crate::spdgeo::ai_distance;

/// Shared bin count for histogram exports.
pub const HISTOGRAM_BINS: usize = 60;

/// Below this eigengap the minimal-eigenvalue gradient is ill-defined and the
/// sample is excluded from the Poincare proxy.
pub const EIGENGAP_THRESHOLD: f64 = 1e-6;

const DEGENERATE_VARIANCE: f64 = 1e-14;

/// The four canonical scalar observables tracked by every run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Trace,
    LogDet,
    LambdaMin,
    DistSq,
}

impl Observable {
    pub const ALL: [Observable; 4] = [
        Observable::Trace,
        Observable::LogDet,
        Observable::LambdaMin,
        Observable::DistSq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::Trace => "trace",
            Observable::LogDet => "logdet",
            Observable::LambdaMin => "lambda_min",
            Observable::DistSq => "dist_sq",
        }
    }

    pub fn value(self, obs: &Observables) -> f64 {
        match self {
            Observable::Trace => obs.trace,
            Observable::LogDet => obs.logdet,
            Observable::LambdaMin => obs.lambda_min,
            Observable::DistSq => obs.dist_sq,
        }
    }
}

/// Riemannian gradient of an observable at `x` (reference point `x0` for the
/// squared distance). `None` when the minimal eigenvalue is too close to its
/// neighbor for its gradient to be trusted.
pub fn observable_grad(
    obs: Observable,
    x: &SpdMatrix,
    x0: &SpdMatrix,
) -> Result<Option<SymMatrix>> {
    match obs {
        // grad of tr is I, pushed to X I X.
        Observable::Trace => Ok(Some(SymMatrix::new(x.mat() * x.mat())?)),
        // grad of logdet is X^{-1}, pushed to X.
        Observable::LogDet => Ok(Some(x.sym().clone())),
        Observable::LambdaMin => {
            let eig = eigh(x.sym())?;
            let d = x.dim();
            if d > 1 && eig.eigenvalues[1] - eig.eigenvalues[0] <= EIGENGAP_THRESHOLD {
                return Ok(None);
            }
            let u = eig.eigenvectors.column(0);
            let xu = x.mat() * u;
            Ok(Some(SymMatrix::new(&xu * xu.transpose())?))
        }
        Observable::DistSq => {
            // -2 Log_X(X0) in ambient form: -2 X^{1/2} log(X^{-1/2} X0 X^{-1/2}) X^{1/2}.
            let s = crate::spdgeo::log_map(x, x0)?;
            let sq = x.sqrt()?;
            Ok(Some(SymMatrix::new(
                -2.0 * (sq.mat() * s.mat() * sq.mat()),
            )?))
        }
    }
}

/// Closed-form squared Riemannian gradient norm of an observable at `x`.
pub fn observable_grad_norm_sq(
    obs: Observable,
    x: &SpdMatrix,
    x0: &SpdMatrix,
) -> Result<Option<f64>> {
    match obs {
        Observable::Trace => {
            let x2 = x.mat() * x.mat();
            Ok(Some(x2.trace()))
        }
        Observable::LogDet => Ok(Some(x.dim() as f64)),
        Observable::LambdaMin => {
            let eig = eigh(x.sym())?;
            let d = x.dim();
            if d > 1 && eig.eigenvalues[1] - eig.eigenvalues[0] <= EIGENGAP_THRESHOLD {
                return Ok(None);
            }
            let lo = eig.eigenvalues[0];
            Ok(Some(lo * lo))
        }
        Observable::DistSq => {
            let dist = ai_distance(x, x0)?;
            Ok(Some(4.0 * dist * dist))
        }
    }
}

/// Squared Riemannian gradient norm of the linear functional tr(CX):
/// tr(X C X C).
pub fn linear_grad_norm_sq(x: &SpdMatrix, c: &SymMatrix) -> Result<f64> {
    if x.dim() != c.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let xc = x.mat() * c.mat();
    Ok((&xc * &xc).trace())
}

fn sample_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = sample_mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard deviation with the n-1 denominator.
pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Split R-hat: each chain is halved and the between/within variance ratio of
/// the half-chains is reported. All-constant input returns 1.0 by convention.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::invalid("split R-hat needs at least 2 chains"));
    }
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        if c.len() < 4 {
            return Err(Error::invalid(
                "split R-hat needs at least 4 samples per chain",
            ));
        }
        let n = c.len() / 2;
        halves.push(&c[..n]);
        halves.push(&c[c.len() - n..]);
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap();
    let halves: Vec<&[f64]> = halves.iter().map(|h| &h[..n]).collect();
    let m = halves.len() as f64;
    let nf = n as f64;

    let means: Vec<f64> = halves.iter().map(|h| sample_mean(h)).collect();
    let w = halves.iter().map(|h| sample_variance(h)).sum::<f64>() / m;
    let b = nf * sample_variance(&means);
    if w < DEGENERATE_VARIANCE {
        return Ok(if b < DEGENERATE_VARIANCE {
            1.0
        } else {
            f64::INFINITY
        });
    }
    Ok(((nf - 1.0) / nf + b / (nf * w)).sqrt())
}

/// Geyer initial-monotone-sequence effective sample size, clamped to [1, N].
/// A constant series returns 1 by convention.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 8 {
        return Err(Error::invalid("ESS needs at least 8 samples"));
    }
    let mu = sample_mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - mu).collect();
    let autocov = |k: usize| -> f64 {
        centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    if c0 < DEGENERATE_VARIANCE {
        return Ok(1.0);
    }
    // Sums of autocorrelation pairs; keep while positive, then enforce
    // monotone decrease.
    let mut pair_sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        pair_sum += gamma;
        prev = gamma;
        m += 1;
    }
    let tau = 2.0 * pair_sum - 1.0;
    Ok((n as f64 / tau).clamp(1.0, n as f64))
}

/// Conservative pooled ESS: the sum of per-chain estimates.
pub fn pooled_ess(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::invalid("no chains"));
    }
    chains.iter().map(|c| ess(c)).sum()
}

/// Monte Carlo standard error from a known pooled standard deviation.
pub fn mcse_from_sd(sd: f64, ess_total: f64) -> Result<f64> {
    if !(ess_total >= 1.0) {
        return Err(Error::invalid("ESS below 1"));
    }
    if sd < 0.0 || !sd.is_finite() {
        return Err(Error::invalid("invalid standard deviation"));
    }
    Ok(sd / ess_total.sqrt())
}

/// Monte Carlo standard error of the pooled mean.
pub fn mcse(pooled: &[f64], ess_total: f64) -> Result<f64> {
    if pooled.len() < 2 {
        return Err(Error::invalid("MCSE needs at least 2 samples"));
    }
    mcse_from_sd(sample_sd(pooled), ess_total)
}

/// Standardized difference of two means under independent MCSEs.
pub fn zscore(mean_a: f64, mcse_a: f64, mean_b: f64, mcse_b: f64) -> Result<f64> {
    let denom_sq = mcse_a * mcse_a + mcse_b * mcse_b;
    if denom_sq <= 0.0 || !denom_sq.is_finite() {
        return Err(Error::DegenerateVariance(
            "z-score needs a positive MCSE".to_string(),
        ));
    }
    Ok((mean_a - mean_b) / denom_sq.sqrt())
}

/// Poincare-quotient result: mean squared gradient norm over sample variance,
/// plus how many samples were excluded for ill-defined gradients.
#[derive(Debug, Clone, Copy)]
pub struct ProxyResult {
    pub rho: f64,
    pub excluded: usize,
}

/// Empirical Poincare proxy rho(h) = E[ ||grad_g h||_g^2 ] / Var(h) for one
/// canonical observable over a set of states.
pub fn poincare_proxy(
    states: &[SpdMatrix],
    values: &[f64],
    obs: Observable,
    x0: &SpdMatrix,
) -> Result<ProxyResult> {
    if states.len() < 2 || states.len() != values.len() {
        return Err(Error::invalid(
            "Poincare proxy needs at least 2 aligned state/value samples",
        ));
    }
    let var = sample_variance(values);
    if var < DEGENERATE_VARIANCE {
        return Err(Error::DegenerateVariance(format!(
            "observable {} has no variance",
            obs.name()
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for x in states {
        match observable_grad_norm_sq(obs, x, x0)? {
            Some(g) => {
                total += g;
                used += 1;
            }
            None => excluded += 1,
        }
    }
    if used == 0 {
        return Err(Error::invalid(format!(
            "all samples excluded from the {} gradient",
            obs.name()
        )));
    }
    Ok(ProxyResult {
        rho: total / used as f64 / var,
        excluded,
    })
}

/// Empirical CDF: sorted values paired with cumulative fractions.
pub fn ecdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::invalid("ECDF of an empty sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect())
}

/// Fixed-bin histogram over a shared range.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w)
    }
}

/// Histograms for several sample sets over one shared [min, max] range so the
/// bars are directly comparable.
pub fn shared_histograms(sets: &[&[f64]], bins: usize) -> Result<Vec<Histogram>> {
    if bins == 0 || sets.is_empty() || sets.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("histogram needs bins and non-empty samples"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in sets {
        for &x in *s {
            if !x.is_finite() {
                return Err(Error::invalid("non-finite sample"));
            }
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = hi - lo;
    Ok(sets
        .iter()
        .map(|s| {
            let mut counts = vec![0usize; bins];
            for &x in *s {
                let i = (((x - lo) / width) * bins as f64).floor() as usize;
                counts[i.min(bins - 1)] += 1;
            }
            Histogram { lo, hi, counts }
        })
        .collect())
}

/// Long-format ECDF CSV: `method,value,ecdf`.
pub fn write_ecdf_csv<W: Write>(out: &mut W, methods: &[(&str, &[f64])]) -> Result<()> {
    writeln!(out, "method,value,ecdf")?;
    for (name, samples) in methods {
        for (v, f) in ecdf(samples)? {
            writeln!(out, "{name},{v},{f}")?;
        }
    }
    Ok(())
}

/// Shared-bin histogram CSV: `bin_lo,bin_hi,count_<method>...`.
pub fn write_histogram_csv<W: Write>(out: &mut W, methods: &[(&str, &[f64])]) -> Result<()> {
    let sets: Vec<&[f64]> = methods.iter().map(|(_, s)| *s).collect();
    let hists = shared_histograms(&sets, HISTOGRAM_BINS)?;
    let mut header = String::from("bin_lo,bin_hi");
    for (name, _) in methods {
        header.push_str(&format!(",count_{name}"));
    }
    writeln!(out, "{header}")?;
    for i in 0..HISTOGRAM_BINS {
        let (lo, hi) = hists[0].bin_edges(i);
        let mut line = format!("{lo},{hi}");
        for h in &hists {
            line.push_str(&format!(",{}", h.counts[i]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Per-observable summary for one method.
#[derive(Debug, Clone)]
pub struct ObservableStats {
    pub observable: Observable,
    pub pooled_mean: f64,
    pub pooled_sd: f64,
    pub rhat: f64,
    pub ess_total: f64,
    pub ess_per_sec: f64,
    pub mcse: f64,
    /// None when state snapshots were not recorded.
    pub rho: Option<f64>,
    pub rho_excluded: usize,
}

/// Diagnostics for one kernel across its chains.
#[derive(Debug, Clone)]
pub struct MethodDiagnostics {
    pub kernel: Kernel,
    pub n_chains: usize,
    pub post_burn_in_len: usize,
    pub runtime_per_chain: Vec<f64>,
    pub total_runtime: f64,
    pub acceptance_mean: f64,
    pub acceptance_sd: f64,
    pub numeric_failures: usize,
    pub observables: Vec<ObservableStats>,
    pub rhat_max: f64,
    pub rho_min: Option<f64>,
}

impl MethodDiagnostics {
    /// Summarizes post-burn-in chains of a single kernel. `x0` is the
    /// potential's reference point, needed for distance gradients.
    pub fn from_traces(traces: &[ChainTrace], x0: &SpdMatrix) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::invalid("no chains to diagnose"));
        }
        let kernel = traces[0].kernel;
        if traces.iter().any(|t| t.kernel != kernel) {
            return Err(Error::invalid("mixed kernels in one method summary"));
        }
        let total_runtime: f64 = traces.iter().map(|t| t.wall_secs).sum();
        let accept_rates: Vec<f64> = traces.iter().map(|t| t.acceptance_rate()).collect();
        let have_states = traces.iter().all(|t| !t.states.is_empty());
        let pooled_states: Vec<&SpdMatrix> = traces
            .iter()
            .flat_map(|t| t.post_burn_in_states().iter())
            .collect();

        let mut observables = Vec::with_capacity(Observable::ALL.len());
        let mut rhat_max = f64::NEG_INFINITY;
        let mut rho_min: Option<f64> = None;
        for obs in Observable::ALL {
            let per_chain: Vec<Vec<f64>> = traces
                .iter()
                .map(|t| t.post_burn_in().iter().map(|r| obs.value(&r.obs)).collect())
                .collect();
            let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
            let rhat = if per_chain.len() >= 2 {
                split_rhat(&per_chain)?
            } else {
                1.0
            };
            let ess_total = pooled_ess(&per_chain)?;
            let stats = ObservableStats {
                observable: obs,
                pooled_mean: sample_mean(&pooled),
                pooled_sd: sample_sd(&pooled),
                rhat,
                ess_total,
                ess_per_sec: ess_total / total_runtime,
                mcse: mcse(&pooled, ess_total)?,
                rho: None,
                rho_excluded: 0,
            };
            let mut stats = stats;
            if have_states {
                let states: Vec<SpdMatrix> = pooled_states.iter().map(|x| (*x).clone()).collect();
                let proxy = poincare_proxy(&states, &pooled, obs, x0)?;
                stats.rho = Some(proxy.rho);
                stats.rho_excluded = proxy.excluded;
                rho_min = Some(rho_min.map_or(proxy.rho, |m: f64| m.min(proxy.rho)));
            }
            rhat_max = rhat_max.max(stats.rhat);
            observables.push(stats);
        }

        Ok(MethodDiagnostics {
            kernel,
            n_chains: traces.len(),
            post_burn_in_len: traces.iter().map(|t| t.post_burn_in().len()).sum(),
            runtime_per_chain: traces.iter().map(|t| t.wall_secs).collect(),
            total_runtime,
            acceptance_mean: sample_mean(&accept_rates),
            acceptance_sd: sample_sd(&accept_rates),
            numeric_failures: traces.iter().map(|t| t.numeric_failures).sum(),
            observables,
            rhat_max,
            rho_min,
        })
    }

    pub fn observable(&self, obs: Observable) -> &ObservableStats {
        self.observables
            .iter()
            .find(|s| s.observable == obs)
            .expect("all canonical observables present")
    }
}

/// Full cross-method report.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub methods: Vec<MethodDiagnostics>,
    /// Standardized mean differences between the first two methods, one per
    /// observable (empty unless exactly two methods are present).
    pub zscores: Vec<(Observable, f64)>,
}

impl DiagnosticsReport {
    pub fn new(methods: Vec<MethodDiagnostics>) -> Result<Self> {
        if methods.is_empty() {
            return Err(Error::invalid("no methods to report"));
        }
        let mut zscores = Vec::new();
        if methods.len() == 2 {
            for obs in Observable::ALL {
                let a = methods[0].observable(obs);
                let b = methods[1].observable(obs);
                zscores.push((obs, zscore(a.pooled_mean, a.mcse, b.pooled_mean, b.mcse)?));
            }
        }
        Ok(DiagnosticsReport { methods, zscores })
    }

    /// One CSV row per method and observable.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "method,observable,mean,sd,rhat,ess,ess_per_sec,mcse,rho,rho_excluded,acceptance,runtime_total_secs"
        )?;
        for m in &self.methods {
            for s in &m.observables {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    m.kernel.name(),
                    s.observable.name(),
                    s.pooled_mean,
                    s.pooled_sd,
                    s.rhat,
                    s.ess_total,
                    s.ess_per_sec,
                    s.mcse,
                    s.rho.map_or(String::from("nan"), |r| r.to_string()),
                    s.rho_excluded,
                    m.acceptance_mean,
                    m.total_runtime,
                )?;
            }
        }
        Ok(())
    }

    /// Three human-readable tables: core mixing statistics, pooled marginals
    /// with the Poincare proxy, and cross-method mean agreement.
    pub fn render_tables(&self) -> String {
        let mut s = String::new();
        s.push_str("Table 1: core sampler diagnostics\n");
        s.push_str(&format!(
            "{:<20} {:>8} {:>10} {:>18} {:>10} {:>16}\n",
            "method", "chains", "runtime_s", "acceptance", "rhat_max", "ess/sec(logdet)"
        ));
        for m in &self.methods {
            let ld = m.observable(Observable::LogDet);
            s.push_str(&format!(
                "{:<20} {:>8} {:>10.1} {:>9.3} +/- {:>5.3} {:>10.6} {:>16.2}\n",
                m.kernel.name(),
                m.n_chains,
                m.total_runtime,
                m.acceptance_mean,
                m.acceptance_sd,
                m.rhat_max,
                ld.ess_per_sec,
            ));
        }
        if self.methods.iter().any(|m| m.numeric_failures > 0) {
            for m in &self.methods {
                if m.numeric_failures > 0 {
                    s.push_str(&format!(
                        "  note: {} rejected {} proposals on numeric failure\n",
                        m.kernel.name(),
                        m.numeric_failures
                    ));
                }
            }
        }

        s.push_str("\nTable 2: pooled marginals and spectral-gap proxy\n");
        s.push_str(&format!(
            "{:<20} {:<12} {:>12} {:>12} {:>10} {:>12} {:>10}\n",
            "method", "observable", "mean", "sd", "rhat", "ess", "rho"
        ));
        for m in &self.methods {
            for st in &m.observables {
                s.push_str(&format!(
                    "{:<20} {:<12} {:>12.6} {:>12.6} {:>10.6} {:>12.1} {:>10}\n",
                    m.kernel.name(),
                    st.observable.name(),
                    st.pooled_mean,
                    st.pooled_sd,
                    st.rhat,
                    st.ess_total,
                    st.rho.map_or(String::from("-"), |r| format!("{r:.3}")),
                ));
            }
            if let Some(rho_min) = m.rho_min {
                let excluded: usize = m.observables.iter().map(|s| s.rho_excluded).sum();
                s.push_str(&format!(
                    "{:<20} rho_min = {:.3} ({} gradient samples excluded)\n",
                    m.kernel.name(),
                    rho_min,
                    excluded
                ));
            }
        }

        if self.methods.len() == 2 {
            s.push_str("\nTable 3: cross-method mean agreement\n");
            let (a, b) = (&self.methods[0], &self.methods[1]);
            s.push_str(&format!(
                "{:<12} {:>12} {:>10} {:>12} {:>10} {:>8}\n",
                "observable",
                format!("mean({})", a.kernel.name()),
                "mcse",
                format!("mean({})", b.kernel.name()),
                "mcse",
                "z"
            ));
            for (obs, z) in &self.zscores {
                let sa = a.observable(*obs);
                let sb = b.observable(*obs);
                s.push_str(&format!(
                    "{:<12} {:>12.6} {:>10.6} {:>12.6} {:>10.6} {:>8.3}\n",
                    obs.name(),
                    sa.pooled_mean,
                    sa.mcse,
                    sb.pooled_mean,
                    sb.mcse,
                    z
                ));
            }
        }
        s
    }
}
