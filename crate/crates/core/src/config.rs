//! Flat key=value experiment configuration.
//!
//! One text format drives every subcommand; the serialized form is written
//! into each output directory as provenance and parses back to an identical
//! config, so any artifact can be regenerated from its own directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sampler::Kernel;

/// Step size for the Euclidean-drift baseline, pilot-tuned on the default
/// target. The baseline's drift grows like 1/(eig_i eig_j) relative to the
/// geometry-aware kernel, so it needs a much smaller step to hold a usable
/// acceptance rate.
pub const DEFAULT_H_NAIVE: f64 = 0.0022;

/// Every knob of the pipeline. Unknown keys are rejected rather than ignored
/// so a typo cannot silently fall back to a default.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Cycle length of the default graph (ignored when `graph_file` is set).
    pub cycle_len: usize,
    /// Optional edge-list file carrying the graph and its weights.
    pub graph_file: Option<PathBuf>,
    /// Weight-block dimension.
    pub d: usize,
    /// Scale of the identity regularizer added to the lifted operator.
    pub r_scale: f64,
    /// Number of rank-one probes in geometry validation.
    pub probes: usize,
    /// Base finite-difference step in geometry validation.
    pub eps: f64,
    pub lambda: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Reference point X0 = x0_scale * I.
    pub x0_scale: f64,
    /// Step size for the geometry-aware kernel.
    pub h: f64,
    /// Step size for the Euclidean-drift baseline.
    pub h_naive: f64,
    pub n_steps: usize,
    pub n_chains: usize,
    pub burn_in_fraction: f64,
    pub seed: u64,
    /// Restrict sampling to one kernel; both run when absent.
    pub kernel: Option<Kernel>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cycle_len: 4,
            graph_file: None,
            d: 3,
            r_scale: 0.1,
            probes: 60,
            eps: 1e-4,
            lambda: 40.0,
            beta: 6.0,
            kappa: 5.0,
            x0_scale: 0.9,
            h: 0.008,
            h_naive: DEFAULT_H_NAIVE,
            n_steps: 20_000,
            n_chains: 4,
            burn_in_fraction: 0.5,
            seed: 20_240_601,
            kernel: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses the flat key=value format. Lines starting with `#` and blank
    /// lines are skipped; keys may appear at most once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {}: expected key=value", no + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Parse(format!(
                    "config line {}: duplicate key `{key}`",
                    no + 1
                )));
            }
            seen.push(key.to_string());
            cfg.apply(key, value)
                .map_err(|e| Error::Parse(format!("config line {}: {e}", no + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Parse(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "m" => self.cycle_len = num(key, value)?,
            "graph_file" => self.graph_file = Some(PathBuf::from(value)),
            "d" => self.d = num(key, value)?,
            "r_scale" => self.r_scale = num(key, value)?,
            "probes" => self.probes = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "x0_scale" => self.x0_scale = num(key, value)?,
            "h" => self.h = num(key, value)?,
            "h_naive" => self.h_naive = num(key, value)?,
            "n_steps" => self.n_steps = num(key, value)?,
            "n_chains" => self.n_chains = num(key, value)?,
            "burn_in_fraction" => self.burn_in_fraction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "kernel" => self.kernel = Some(Kernel::parse(value)?),
            other => return Err(Error::Parse(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycle_len < 3 {
            return Err(Error::invalid("cycle length must be at least 3"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d must be positive"));
        }
        if !(self.r_scale > 0.0) {
            return Err(Error::invalid("r_scale must be positive"));
        }
        if self.probes == 0 {
            return Err(Error::invalid("probes must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if self.beta < 0.0 || self.kappa < 0.0 {
            return Err(Error::invalid("beta and kappa must be nonnegative"));
        }
        if !(self.x0_scale > 0.0) {
            return Err(Error::invalid("x0_scale must be positive"));
        }
        if !(self.h > 0.0) || !(self.h_naive > 0.0) {
            return Err(Error::invalid("step sizes must be positive"));
        }
        if self.n_steps == 0 || self.n_chains == 0 {
            return Err(Error::invalid("need at least one step and one chain"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::invalid("burn_in_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Serializes in a fixed key order; the output parses back to `self`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("m={}\n", self.cycle_len));
        if let Some(p) = &self.graph_file {
            s.push_str(&format!("graph_file={}\n", p.display()));
        }
        s.push_str(&format!("d={}\n", self.d));
        s.push_str(&format!("r_scale={}\n", self.r_scale));
        s.push_str(&format!("probes={}\n", self.probes));
        s.push_str(&format!("eps={}\n", self.eps));
        s.push_str(&format!("lambda={}\n", self.lambda));
        s.push_str(&format!("beta={}\n", self.beta));
        s.push_str(&format!("kappa={}\n", self.kappa));
        s.push_str(&format!("x0_scale={}\n", self.x0_scale));
        s.push_str(&format!("h={}\n", self.h));
        s.push_str(&format!("h_naive={}\n", self.h_naive));
        s.push_str(&format!("n_steps={}\n", self.n_steps));
        s.push_str(&format!("n_chains={}\n", self.n_chains));
        s.push_str(&format!("burn_in_fraction={}\n", self.burn_in_fraction));
        s.push_str(&format!("seed={}\n", self.seed));
        if let Some(k) = self.kernel {
            s.push_str(&format!("kernel={}\n", k.name()));
        }
        s
    }

    /// The kernels a sampling run should execute.
    pub fn kernels(&self) -> Vec<Kernel> {
        match self.kernel {
            Some(k) => vec![k],
            None => vec![Kernel::GeomMala, Kernel::NaiveEuclidDrift],
        }
    }

    /// Step size for one kernel.
    pub fn step_size(&self, kernel: Kernel) -> f64 {
        match kernel {
            Kernel::GeomMala => self.h,
            Kernel::NaiveEuclidDrift => self.h_naive,
        }
    }
}
