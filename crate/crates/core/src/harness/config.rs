//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, TensorTerm, DEFAULT_CANONICAL_TOL};
use crate::model::{ModelParams, RegimeKind};
use crate::ou_kernel::{Func1D, SeparableFn};
use crate::simulator::{Caps, DEFAULT_MAX_PARTICLES};
use crate::ustats::DEFAULT_MAX_ARITY;

/// Smallest replica count accepted for distributional tests.
pub const MIN_DISTRIBUTIONAL_REPLICAS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Lln,
    Clt,
    Wlaw,
    Oracle,
    Martingale,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Lln => "lln",
            TestKind::Clt => "clt",
            TestKind::Wlaw => "wlaw",
            TestKind::Oracle => "oracle",
            TestKind::Martingale => "martingale",
        }
    }

    fn distributional(self) -> bool {
        matches!(self, TestKind::Clt | TestKind::Wlaw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

/// One product term. `factors[slot][coord]` lists polynomial coefficients in
/// increasing degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    #[serde(default = "one")]
    pub coeff: f64,
    pub factors: Vec<Vec<Vec<f64>>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub terms: Vec<TermSpec>,
    /// Declares the kernel symmetric; otherwise it is symmetrized where needed.
    #[serde(default)]
    pub symmetric: bool,
}

impl KernelSpec {
    pub fn arity(&self) -> usize {
        self.terms.first().map_or(0, |t| t.factors.len())
    }

    pub fn build(&self, dim: usize) -> Result<Kernel> {
        if self.terms.is_empty() {
            return Err(Error::Config("kernel has no terms".into()));
        }
        let arity = self.arity();
        if arity == 0 {
            return Err(Error::Config("kernel terms need at least one slot".into()));
        }
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut factors = Vec::with_capacity(t.factors.len());
            for slot in &t.factors {
                if slot.len() != dim {
                    return Err(Error::Config(format!(
                        "kernel factor has {} coordinates, model dimension is {dim}",
                        slot.len()
                    )));
                }
                let coords = slot.iter().map(|c| Func1D::poly(c.clone())).collect();
                factors.push(SeparableFn::product(coords));
            }
            terms.push(TensorTerm {
                coeff: t.coeff,
                factors,
            });
        }
        Kernel::tensor_sum(arity, dim, terms, self.symmetric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub t_grid: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    /// Worker threads; 0 picks the machine default.
    #[serde(default)]
    pub threads: usize,
    /// Regime the experiment expects the parameters to be in.
    #[serde(default)]
    pub regime: Option<RegimeKind>,
    #[serde(default)]
    pub tests: Vec<TestKind>,
    /// Gap `T_max - t` used to estimate `V_inf`; default `2 / lambda_p`.
    #[serde(default)]
    pub t_max_gap: Option<f64>,
    /// Horizon at which `H_t` stands in for `H_inf` in the fast-regime sampler.
    #[serde(default)]
    pub limit_horizon: Option<f64>,
    /// Emit one record per replica, time and statistic.
    #[serde(default = "yes")]
    pub records: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Multiples of the standard error for mean comparisons.
    pub se_multiple: f64,
    pub ks_level: f64,
    /// Multiples of the standard error for the `G_1` variance check.
    pub g1_se_multiple: f64,
    pub survival_se_multiple: f64,
    /// Bound on `|rho|` for the asymptotic independence checks.
    pub correlation_bound: f64,
    /// Lower bound on the same-trajectory correlation in the fast regime.
    pub fast_correlation: f64,
    pub canonical_tol: f64,
    pub oracle_rel_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            se_multiple: 4.0,
            ks_level: 0.01,
            g1_se_multiple: 5.0,
            survival_se_multiple: 3.0,
            correlation_bound: 0.05,
            fast_correlation: 0.95,
            canonical_tol: DEFAULT_CANONICAL_TOL,
            oracle_rel_tol: crate::tree_oracle::DEFAULT_REL_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapsSpec {
    pub max_particles: usize,
    pub max_arity: usize,
}

impl Default for CapsSpec {
    fn default() -> Self {
        CapsSpec {
            max_particles: DEFAULT_MAX_PARTICLES,
            max_arity: DEFAULT_MAX_ARITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub kernel: KernelSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub caps: CapsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub t_grid: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(r) = o.replicas {
            self.run.replicas = r;
        }
        if let Some(t) = &o.t_grid {
            self.run.t_grid = t.clone();
        }
        if let Some(d) = &o.out {
            self.output.dir = Some(d.clone());
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
        if let Some(n) = o.threads {
            self.run.threads = n;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.model.validate().map_err(cfg_err)?;
        self.kernel.build(self.model.dim()).map_err(cfg_err)?;
        let r = &self.run;
        if r.replicas == 0 {
            return Err(Error::Config("replicas must be positive".into()));
        }
        if r.tests.iter().any(|t| t.distributional()) && r.replicas < MIN_DISTRIBUTIONAL_REPLICAS {
            return Err(Error::Config(format!(
                "distributional tests need at least {MIN_DISTRIBUTIONAL_REPLICAS} replicas"
            )));
        }
        if r.t_grid.is_empty() || r.t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config("t_grid must be nonempty with finite times >= 0".into()));
        }
        if r.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("t_grid must increase".into()));
        }
        for (name, v) in [("t_max_gap", r.t_max_gap), ("limit_horizon", r.limit_horizon)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be > 0")));
                }
            }
        }
        let t = &self.tolerances;
        if !(t.ks_level > 0.0 && t.ks_level < 1.0) {
            return Err(Error::Config("ks_level must lie in (0, 1)".into()));
        }
        if self.caps.max_particles == 0 {
            return Err(Error::Config("max_particles must be positive".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel> {
        self.kernel.build(self.model.dim())
    }

    pub fn caps(&self) -> Caps {
        Caps {
            max_particles: self.caps.max_particles,
        }
    }

    pub fn t_final(&self) -> f64 {
        *self.run.t_grid.last().expect("validated grid")
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    /// Digest of everything that can change results; output settings and the
    /// thread count are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSpec::default();
        c.run.threads = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
