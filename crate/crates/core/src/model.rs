//! Model parameters of the binary branching Ornstein-Uhlenbeck system and the
//! closed-form Galton-Watson quantities derived from them.
//!
//! Each particle lives an `Exp(lambda)` time, then either splits in two (with
//! probability `p`) or dies. Between branching events it follows an OU
//! diffusion with drift `mu` and diffusion coefficient `sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide that `lambda_p == 2 mu`.
pub const DEFAULT_CRITICAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub p: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Start position; its length is the spatial dimension.
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Growth rate `(2p - 1) lambda` of the expected population.
    pub lambda_p: f64,
    /// Extinction probability `(1 - p) / p`.
    pub p_ext: f64,
    /// Rate of the exponential law of `W`, `(2p - 1) / p`.
    pub w_rate: f64,
    /// Per-coordinate variance of the invariant measure, `sigma^2 / (2 mu)`.
    pub stat_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    Slow,
    Critical,
    Fast,
}

impl RegimeKind {
    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Slow => "slow",
            RegimeKind::Critical => "critical",
            RegimeKind::Fast => "fast",
        }
    }
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Branching regime together with the two rates it was decided from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub kind: RegimeKind,
    pub lambda_p: f64,
    pub two_mu: f64,
}

impl Regime {
    pub fn require(&self, expected: RegimeKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::RegimeMismatch {
                expected: expected.name(),
                actual: self.kind.name(),
            })
        }
    }
}

impl ModelParams {
    pub fn new(lambda: f64, p: f64, mu: f64, sigma: f64, x0: Vec<f64>) -> Result<Self> {
        let params = ModelParams {
            lambda,
            p,
            mu,
            sigma,
            x0,
        };
        params.validate()?;
        Ok(params)
    }

    /// One-dimensional system started at the origin.
    pub fn one_dim(lambda: f64, p: f64, mu: f64, sigma: f64) -> Result<Self> {
        Self::new(lambda, p, mu, sigma, vec![0.0])
    }

    pub fn with_start(mut self, x0: Vec<f64>) -> Result<Self> {
        self.x0 = x0;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("mu", self.mu)?;
        positive("sigma", self.sigma)?;
        // p = 1 (pure Yule process) is admitted.
        if !(self.p > 0.5 && self.p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p must lie in (1/2, 1], got {}",
                self.p
            )));
        }
        if self.x0.is_empty() {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("x0 must be finite".into()));
        }
        Ok(())
    }

    pub fn lambda_p(&self) -> f64 {
        (2.0 * self.p - 1.0) * self.lambda
    }

    pub fn stat_var(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.mu)
    }

    pub fn stat_sd(&self) -> f64 {
        self.stat_var().sqrt()
    }

    pub fn derive(&self) -> Result<DerivedConstants> {
        derive(self)
    }

    pub fn regime(&self) -> Result<Regime> {
        classify(self, DEFAULT_CRITICAL_TOL)
    }
}

pub fn derive(params: &ModelParams) -> Result<DerivedConstants> {
    params.validate()?;
    let p = params.p;
    Ok(DerivedConstants {
        lambda_p: params.lambda_p(),
        p_ext: (1.0 - p) / p,
        w_rate: (2.0 * p - 1.0) / p,
        stat_var: params.stat_var(),
    })
}

/// Classifies the branching regime; `|lambda_p - 2 mu| <= tol * max(lambda_p, 2 mu)`
/// counts as critical.
pub fn classify(params: &ModelParams, tol: f64) -> Result<Regime> {
    params.validate()?;
    let lambda_p = params.lambda_p();
    let two_mu = 2.0 * params.mu;
    let kind = if (lambda_p - two_mu).abs() <= tol * lambda_p.max(two_mu) {
        RegimeKind::Critical
    } else if lambda_p < two_mu {
        RegimeKind::Slow
    } else {
        RegimeKind::Fast
    };
    Ok(Regime {
        kind,
        lambda_p,
        two_mu,
    })
}

impl DerivedConstants {
    /// Mean of `W` (exponential with rate `w_rate`) and the variance of the
    /// unconditioned martingale limit `V_inf`, `1 / (2p - 1)`.
    pub fn w_moments(&self) -> (f64, f64) {
        let p = 1.0 / (1.0 + self.p_ext);
        (1.0 / self.w_rate, 1.0 / (2.0 * p - 1.0))
    }

    pub fn survival_probability(&self) -> f64 {
        1.0 - self.p_ext
    }

    /// `E |X_t| = exp(lambda_p t)`.
    pub fn mean_population(&self, t: f64) -> f64 {
        (self.lambda_p * t).exp()
    }

    /// Probability that the population is extinct by time `t`.
    ///
    /// Solves the backward equation `q' = lambda (F(q) - q)`, `q(0) = 0`, with
    /// `F(s) = p s^2 + 1 - p`; its roots are `p_ext` and `1`, giving a logistic form.
    pub fn extinction_by(&self, t: f64) -> f64 {
        let decay = (-self.lambda_p * t).exp();
        self.p_ext * (1.0 - decay) / (1.0 - self.p_ext * decay)
    }
}
