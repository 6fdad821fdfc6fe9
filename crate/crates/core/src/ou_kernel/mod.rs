//! Ornstein-Uhlenbeck transition law, semigroup and invariant measure.
//!
//! The semigroup acts as `T_t f(x) = E f(x e^{-mu t} + ou(t) G)` where
//! `ou(t) = sqrt(1 - e^{-2 mu t})` and `G` has the invariant law.

pub mod func;
pub mod quadrature;

use rand::Rng;
use rand_distr::StandardNormal;

pub use func::{hermite_he, BlackBox, Func1D, Growth, Polynomial, SeparableFn};
pub use quadrature::{LegendreRule, QuadratureRule, DEFAULT_SPACE_NODES};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// `sqrt(1 - e^{-2 mu t})`.
pub fn ou_factor(mu: f64, t: f64) -> f64 {
    (-(-2.0 * mu * t).exp_m1()).max(0.0).sqrt()
}

/// Exact OU transition over `dt`, written into `x`.
pub fn ou_advance<R: Rng + ?Sized>(x: &mut [f64], dt: f64, params: &ModelParams, rng: &mut R) {
    if dt <= 0.0 {
        return;
    }
    let decay = (-params.mu * dt).exp();
    let spread = ou_factor(params.mu, dt) * params.stat_sd();
    for xi in x.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *xi = *xi * decay + spread * z;
    }
}

pub fn ou_transition_sample<R: Rng + ?Sized>(
    x: &[f64],
    dt: f64,
    params: &ModelParams,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = x.to_vec();
    ou_advance(&mut out, dt, params, rng);
    out
}

/// `T_t f(x)` by quadrature against the invariant law.
pub fn semigroup_apply(
    f: &Func1D,
    t: f64,
    x: f64,
    params: &ModelParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    f.check_admissible()?;
    if t == 0.0 {
        return Ok(f.eval(x));
    }
    let decay = (-params.mu * t).exp();
    let spread = ou_factor(params.mu, t);
    Ok(rule.expect(|g| f.eval(x * decay + spread * g)))
}

/// The function `T_t f` itself. Polynomials stay polynomials (closed form);
/// black boxes become closures over a default-size quadrature.
pub fn evolve(f: &Func1D, t: f64, params: &ModelParams) -> Result<Func1D> {
    f.check_admissible()?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    let decay = (-params.mu * t).exp();
    let spread = ou_factor(params.mu, t) * params.stat_sd();
    match f.as_polynomial() {
        Some(p) => Ok(Func1D::Polynomial(p.gaussian_smooth(decay, spread))),
        None => {
            let rule = QuadratureRule::standard_normal(DEFAULT_SPACE_NODES);
            let g = f.clone();
            let growth = f.growth_degree().map_or(Growth::Unbounded, Growth::Polynomial);
            Ok(Func1D::black_box(
                move |x| rule.expect(|z| g.eval(x * decay + spread * z)),
                growth,
            ))
        }
    }
}

/// Coordinatewise `T_t` applied to every term of a separable function.
pub fn evolve_separable(f: &SeparableFn, t: f64, params: &ModelParams) -> Result<SeparableFn> {
    let mut terms = Vec::with_capacity(f.terms().len());
    for (c, coords) in f.terms() {
        let coords = coords
            .iter()
            .map(|g| evolve(g, t, params))
            .collect::<Result<Vec<_>>>()?;
        terms.push((*c, coords));
    }
    SeparableFn::from_terms(f.dim(), terms)
}

/// `<f, phi>` for a one-dimensional function.
pub fn invariant_integral(f: &Func1D, params: &ModelParams, rule: &QuadratureRule) -> Result<f64> {
    f.check_admissible()?;
    match f.as_polynomial() {
        Some(p) if p.degree() <= rule.exactness() => {
            Ok(p.gaussian_smooth(0.0, params.stat_sd()).eval(0.0))
        }
        _ => Ok(rule.expect(|g| f.eval(g))),
    }
}

/// `<f, phi^{(x) d}>` for a separable d-variate function.
pub fn invariant_integral_separable(
    f: &SeparableFn,
    params: &ModelParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    let mut total = 0.0;
    for (c, coords) in f.terms() {
        let mut prod = *c;
        for g in coords {
            prod *= invariant_integral(g, params, rule)?;
        }
        total += prod;
    }
    Ok(total)
}

/// Density of the invariant measure, `(mu / (pi sigma^2))^{d/2} exp(-mu |x|^2 / sigma^2)`.
pub fn invariant_density(x: &[f64], params: &ModelParams) -> f64 {
    let s2 = params.sigma * params.sigma;
    let norm = (params.mu / (std::f64::consts::PI * s2)).powf(x.len() as f64 / 2.0);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    norm * (-params.mu * r2 / s2).exp()
}

/// `d phi / d x_l` at `x` (0-based coordinate).
pub fn invariant_density_gradient(l: usize, x: &[f64], params: &ModelParams) -> Result<f64> {
    if l >= x.len() {
        return Err(Error::InvalidParameter(format!(
            "coordinate {l} out of range for dimension {}",
            x.len()
        )));
    }
    let s2 = params.sigma * params.sigma;
    Ok(-(2.0 * params.mu / s2) * x[l] * invariant_density(x, params))
}

/// `int f(x) phi'(x) dx` for a one-dimensional factor, computed as
/// `-(2 mu / sigma^2) <x f, phi>`.
pub fn density_gradient_pairing(
    f: &Func1D,
    params: &ModelParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    let xf = f.mul(&Func1D::identity());
    let s2 = params.sigma * params.sigma;
    Ok(-(2.0 * params.mu / s2) * invariant_integral(&xf, params, rule)?)
}

/// `e^{lam t}`, the factor turning `T_t` into `T_t^lam`.
pub fn tilted_semigroup_factor(t: f64, lam: f64) -> f64 {
    (lam * t).exp()
}
