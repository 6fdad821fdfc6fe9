//! Asymptotic variances and samplers for the limit laws of normalized
//! U-statistics in the slow, critical and fast regimes.
//!
//! The samplers work on tensor-sum kernels `sum_l c_l f_1^l (x) .. (x) f_n^l`,
//! for which every limit is a polynomial in a finite Gaussian family (slow,
//! critical) or in the limit `H_inf` of the position martingale (fast).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{canonical_residual, project, Kernel, TensorTerm, DEFAULT_CANONICAL_TOL};
use crate::model::{ModelParams, RegimeKind};
use crate::ou_kernel::{
    density_gradient_pairing, evolve_separable, invariant_integral, invariant_integral_separable,
    LegendreRule, QuadratureRule, SeparableFn,
};
use crate::simulator::{simulate, Caps};

pub const DEFAULT_TIME_NODES: usize = 128;
pub const DEFAULT_MAX_DIAGRAM_LABELS: usize = 8;
pub const PSD_CLIP: f64 = 1e-10;
/// Target relative accuracy of `H_t` as a proxy for `H_inf`.
pub const DEFAULT_H_ACCURACY: f64 = 1e-3;

/// Partial pairing of the labels `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeynmanDiagram {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub unpaired: Vec<usize>,
}

impl FeynmanDiagram {
    pub fn rank(&self) -> usize {
        self.edges.len()
    }
}

pub fn enumerate_diagrams(n: usize, cap: usize) -> Result<Vec<FeynmanDiagram>> {
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    fn rec(rest: &[usize], edges: &mut Vec<(usize, usize)>, unpaired: &mut Vec<usize>, n: usize, out: &mut Vec<FeynmanDiagram>) {
        let Some((&first, tail)) = rest.split_first() else {
            let mut u = unpaired.clone();
            u.sort_unstable();
            out.push(FeynmanDiagram {
                n,
                edges: edges.clone(),
                unpaired: u,
            });
            return;
        };
        unpaired.push(first);
        rec(tail, edges, unpaired, n, out);
        unpaired.pop();
        for (i, &partner) in tail.iter().enumerate() {
            let remaining: Vec<usize> = tail.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
            edges.push((first, partner));
            rec(&remaining, edges, unpaired, n, out);
            edges.pop();
        }
    }
    let labels: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    rec(&labels, &mut Vec::new(), &mut Vec::new(), n, &mut out);
    Ok(out)
}

fn relative_mean(f: &SeparableFn, params: &ModelParams, rule: &QuadratureRule) -> Result<f64> {
    let m = invariant_integral_separable(f, params, rule)?;
    let sq = invariant_integral_separable(&f.mul(f), params, rule)?;
    Ok(if sq > 0.0 { m.abs() / sq.sqrt() } else { m.abs() })
}

/// `<phi, f g> + 2 lambda p int_0^inf e^{lambda_p s} <phi, T_s f T_s g> ds` for
/// centred `f, g`, the covariance of the slow-regime Gaussian family.
pub fn slow_covariance(
    f: &SeparableFn,
    g: &SeparableFn,
    params: &ModelParams,
    rule: &QuadratureRule,
    time_nodes: usize,
) -> Result<f64> {
    params.regime()?.require(RegimeKind::Slow)?;
    for h in [f, g] {
        h.check_admissible()?;
        let r = relative_mean(h, params, rule)?;
        if r > 1e-9 {
            return Err(Error::Divergence(format!(
                "time integral diverges for a factor with nonzero invariant mean (relative {r:e})"
            )));
        }
    }
    let lp = params.lambda_p();
    let rate = 2.0 * params.mu - lp;
    let base = invariant_integral_separable(&f.mul(g), params, rule)?;
    // s = -ln(u) / rate maps (0, 1] onto [0, inf); the centred integrand decays
    // at least like e^{-2 mu s}, so e^{lp s} <..> / u stays bounded as u -> 0.
    let time_rule = LegendreRule::new(time_nodes);
    let mut integral = 0.0;
    for (u, w) in time_rule.on(0.0, 1.0) {
        let s = -u.ln() / rate;
        let fs = evolve_separable(f, s, params)?;
        let gs = evolve_separable(g, s, params)?;
        let inner = invariant_integral_separable(&fs.mul(&gs), params, rule)?;
        integral += w * (lp * s).exp() * inner / (rate * u);
    }
    if !integral.is_finite() {
        return Err(Error::Divergence("time integral is not finite".into()));
    }
    Ok(base + 2.0 * params.lambda * params.p * integral)
}

/// Slow-regime asymptotic variance of `<X_t, f> / sqrt|X_t|` for `f - <f, phi>`.
pub fn sigma_slow(
    f: &SeparableFn,
    params: &ModelParams,
    rule: &QuadratureRule,
    time_nodes: usize,
) -> Result<f64> {
    params.regime()?.require(RegimeKind::Slow)?;
    let centred = f.add_constant(-invariant_integral_separable(f, params, rule)?);
    slow_covariance(&centred, &centred, params, rule, time_nodes)
}

/// `<f, d phi / d x_l>` for every coordinate `l`.
pub fn gradient_pairings(f: &SeparableFn, params: &ModelParams, rule: &QuadratureRule) -> Result<Vec<f64>> {
    f.check_admissible()?;
    let d = f.dim();
    let mut out = vec![0.0; d];
    for (c, coords) in f.terms() {
        let means = coords
            .iter()
            .map(|g| invariant_integral(g, params, rule))
            .collect::<Result<Vec<_>>>()?;
        for l in 0..d {
            let mut prod = *c * density_gradient_pairing(&coords[l], params, rule)?;
            for (k, m) in means.iter().enumerate() {
                if k != l {
                    prod *= m;
                }
            }
            out[l] += prod;
        }
    }
    Ok(out)
}

/// `(lambda p sigma^2 / mu) sum_l <f, d_l phi> <g, d_l phi>`.
pub fn critical_covariance(
    f: &SeparableFn,
    g: &SeparableFn,
    params: &ModelParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    params.regime()?.require(RegimeKind::Critical)?;
    let a = gradient_pairings(f, params, rule)?;
    let b = gradient_pairings(g, params, rule)?;
    let scale = params.lambda * params.p * params.sigma * params.sigma / params.mu;
    Ok(scale * a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>())
}

pub fn sigma_critical(f: &SeparableFn, params: &ModelParams, rule: &QuadratureRule) -> Result<f64> {
    critical_covariance(f, f, params, rule)
}

/// The first Hoeffding projection `Pi_1 f` of a symmetric tensor-sum kernel as a
/// single function.
pub fn first_projection(f: &Kernel, params: &ModelParams, rule: &QuadratureRule) -> Result<SeparableFn> {
    if !f.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    let p1 = project(f, &[0], params, rule)?;
    let terms = p1.terms().ok_or_else(|| Error::NotPolynomial("projection of a black-box kernel".into()))?;
    let mut acc = SeparableFn::constant(f.dim(), 0.0);
    for t in terms {
        acc = acc.add(&t.factors[0].scale(t.coeff));
    }
    Ok(acc)
}

/// Limit variance of the regime-normalized U-statistic of a symmetric kernel of
/// degeneracy order zero: `n^2 sigma^2(Pi_1 f)`, slow or critical regime.
pub fn first_order_variance(
    f: &Kernel,
    params: &ModelParams,
    rule: &QuadratureRule,
    time_nodes: usize,
) -> Result<f64> {
    let g = first_projection(f, params, rule)?;
    let n = f.arity() as f64;
    let s2 = match params.regime()?.kind {
        RegimeKind::Slow => sigma_slow(&g, params, rule, time_nodes)?,
        RegimeKind::Critical => sigma_critical(&g, params, rule)?,
        RegimeKind::Fast => {
            return Err(Error::RegimeMismatch {
                expected: "slow or critical",
                actual: RegimeKind::Fast.name(),
            })
        }
    };
    Ok(n * n * s2)
}

/// Centred Gaussian vector indexed by test functions.
#[derive(Debug, Clone)]
pub struct GaussianFamily {
    pub labels: Vec<SeparableFn>,
    pub covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GaussianFamily {
    /// Builds the family from a covariance functional; fails when the matrix has
    /// an eigenvalue below `-PSD_CLIP` (relative to its largest one).
    pub fn new(labels: Vec<SeparableFn>, cov: impl Fn(&SeparableFn, &SeparableFn) -> Result<f64>) -> Result<Self> {
        let n = labels.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = cov(&labels[i], &labels[j])?;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self::from_matrix(labels, m)
    }

    pub fn from_matrix(labels: Vec<SeparableFn>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != covariance.ncols() || covariance.nrows() != labels.len() {
            return Err(Error::InvalidParameter("covariance shape does not match labels".into()));
        }
        if (&covariance - covariance.transpose()).abs().max() > 1e-12 * covariance.abs().max().max(1.0) {
            return Err(Error::InvalidParameter("covariance is not symmetric".into()));
        }
        let n = labels.len();
        if n == 0 {
            return Ok(GaussianFamily {
                labels,
                covariance: covariance.clone(),
                factor: covariance,
            });
        }
        let eig = SymmetricEigen::new(covariance.clone());
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
        let mut sqrt_vals = eig.eigenvalues.clone();
        for v in sqrt_vals.iter_mut() {
            if *v < -PSD_CLIP * top {
                return Err(Error::NotPsd(*v));
            }
            *v = v.max(0.0).sqrt();
        }
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
        Ok(GaussianFamily {
            labels,
            covariance,
            factor,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.labels.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let z = nalgebra::DVector::from_vec(z);
        (&self.factor * z).iter().copied().collect()
    }
}

fn canonical_terms<'a>(
    f: &'a Kernel,
    params: &ModelParams,
    rule: &QuadratureRule,
) -> Result<&'a [TensorTerm]> {
    let terms = f.terms().ok_or_else(|| {
        Error::NotPolynomial("limit samplers need a tensor-sum kernel; approximate black boxes first".into())
    })?;
    let residual = canonical_residual(f, params, rule)?;
    if residual > DEFAULT_CANONICAL_TOL {
        return Err(Error::NotCanonical { residual });
    }
    Ok(terms)
}

/// Label layout `(term, slot) -> family index`.
fn flatten_labels(terms: &[TensorTerm]) -> (Vec<SeparableFn>, Vec<Vec<usize>>) {
    let mut labels = Vec::new();
    let mut index = Vec::with_capacity(terms.len());
    for t in terms {
        let mut row = Vec::with_capacity(t.factors.len());
        for g in &t.factors {
            row.push(labels.len());
            labels.push(g.clone());
        }
        index.push(row);
    }
    (labels, index)
}

/// Sampler for the slow-regime limit of `|X_t|^{-n/2} U_t^n(f)`.
#[derive(Debug, Clone)]
pub struct SlowLimit {
    coeffs: Vec<f64>,
    index: Vec<Vec<usize>>,
    family: GaussianFamily,
    /// Per term, per diagram: sign times the product of edge pairings, and the unpaired slots.
    diagram_weights: Vec<Vec<(f64, Vec<usize>)>>,
}

impl SlowLimit {
    pub fn new(f: &Kernel, params: &ModelParams, rule: &QuadratureRule, time_nodes: usize) -> Result<Self> {
        params.regime()?.require(RegimeKind::Slow)?;
        let terms = canonical_terms(f, params, rule)?;
        let (labels, index) = flatten_labels(terms);
        let family = GaussianFamily::new(labels, |a, b| slow_covariance(a, b, params, rule, time_nodes))?;
        let diagrams = enumerate_diagrams(f.arity(), DEFAULT_MAX_DIAGRAM_LABELS)?;
        let mut diagram_weights = Vec::with_capacity(terms.len());
        for t in terms {
            let mut per = Vec::with_capacity(diagrams.len());
            for g in &diagrams {
                let mut w = if g.rank() % 2 == 0 { 1.0 } else { -1.0 };
                for &(j, k) in &g.edges {
                    w *= invariant_integral_separable(&t.factors[j].mul(&t.factors[k]), params, rule)?;
                }
                per.push((w, g.unpaired.clone()));
            }
            diagram_weights.push(per);
        }
        Ok(SlowLimit {
            coeffs: terms.iter().map(|t| t.coeff).collect(),
            index,
            family,
            diagram_weights,
        })
    }

    pub fn family(&self) -> &GaussianFamily {
        &self.family
    }

    /// Value of the limit for a given draw of the Gaussian family.
    pub fn evaluate(&self, g: &[f64]) -> f64 {
        let mut total = 0.0;
        for ((c, idx), diags) in self.coeffs.iter().zip(&self.index).zip(&self.diagram_weights) {
            let mut s = 0.0;
            for (w, unpaired) in diags {
                s += w * unpaired.iter().map(|&r| g[idx[r]]).product::<f64>();
            }
            total += c * s;
        }
        total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = self.family.sample(rng);
        self.evaluate(&g)
    }
}

/// Sampler for the critical-regime limit of `(t |X_t|)^{-n/2} U_t^n(f)`.
#[derive(Debug, Clone)]
pub struct CriticalLimit {
    coeffs: Vec<f64>,
    index: Vec<Vec<usize>>,
    family: GaussianFamily,
}

impl CriticalLimit {
    pub fn new(f: &Kernel, params: &ModelParams, rule: &QuadratureRule) -> Result<Self> {
        params.regime()?.require(RegimeKind::Critical)?;
        let terms = canonical_terms(f, params, rule)?;
        let (labels, index) = flatten_labels(terms);
        let family = GaussianFamily::new(labels, |a, b| critical_covariance(a, b, params, rule))?;
        Ok(CriticalLimit {
            coeffs: terms.iter().map(|t| t.coeff).collect(),
            index,
            family,
        })
    }

    pub fn family(&self) -> &GaussianFamily {
        &self.family
    }

    pub fn evaluate(&self, g: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.index)
            .map(|(c, idx)| c * idx.iter().map(|&i| g[i]).product::<f64>())
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = self.family.sample(rng);
        self.evaluate(&g)
    }
}

/// Default horizon at which `H_t` stands in for `H_inf`: the mean-square gap
/// decays like `e^{-(lambda_p - 2 mu) t}`.
pub fn default_h_horizon(params: &ModelParams) -> f64 {
    (1.0 / DEFAULT_H_ACCURACY).ln() / (params.lambda_p() - 2.0 * params.mu)
}

/// Sampler for the fast-regime limit of `e^{-n (lambda_p - mu) t} U_t^n(f)`.
#[derive(Debug, Clone)]
pub struct FastLimit {
    coeffs: Vec<f64>,
    /// Per term and slot, `<d f_j / d x_i, phi>` for every coordinate `i`.
    gradients: Vec<Vec<Vec<f64>>>,
    params: ModelParams,
    pub t_approx: f64,
}

impl FastLimit {
    pub fn new(f: &Kernel, params: &ModelParams, rule: &QuadratureRule, t_approx: f64) -> Result<Self> {
        params.regime()?.require(RegimeKind::Fast)?;
        if !(t_approx > 0.0 && t_approx.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_approx must be > 0, got {t_approx}")));
        }
        let terms = canonical_terms(f, params, rule)?;
        let mut gradients = Vec::with_capacity(terms.len());
        for t in terms {
            let mut per_slot = Vec::with_capacity(t.factors.len());
            for g in &t.factors {
                let mut grad = Vec::with_capacity(g.dim());
                for i in 0..g.dim() {
                    grad.push(invariant_integral_separable(&g.partial(i)?, params, rule)?);
                }
                per_slot.push(grad);
            }
            gradients.push(per_slot);
        }
        Ok(FastLimit {
            coeffs: terms.iter().map(|t| t.coeff).collect(),
            gradients,
            params: params.clone(),
            t_approx,
        })
    }

    /// The limit as a polynomial in the martingale limit `h`.
    pub fn evaluate(&self, h: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.gradients)
            .map(|(c, slots)| {
                c * slots
                    .iter()
                    .map(|grad| grad.iter().zip(h).map(|(a, b)| a * b).sum::<f64>())
                    .product::<f64>()
            })
            .sum()
    }

    /// `H_{t_approx}` from one trajectory with stream key `key`.
    pub fn sample_h(&self, key: u64, caps: &Caps) -> Result<Vec<f64>> {
        let snap = simulate(&self.params, self.t_approx, key, caps)?;
        let w = ((self.params.mu - self.params.lambda_p()) * self.t_approx).exp();
        Ok(snap.position_sum().into_iter().map(|v| w * v).collect())
    }

    pub fn sample(&self, key: u64, caps: &Caps) -> Result<f64> {
        Ok(self.evaluate(&self.sample_h(key, caps)?))
    }

    /// Draw conditioned on survival up to `t_approx`: retries derived keys
    /// until a surviving trajectory appears.
    pub fn sample_conditioned(&self, key: u64, caps: &Caps, max_tries: usize) -> Result<f64> {
        for attempt in 0..max_tries as u64 {
            let k = crate::simulator::mix_key(key, attempt);
            let snap = simulate(&self.params, self.t_approx, k, caps)?;
            if !snap.is_extinct() {
                let w = ((self.params.mu - self.params.lambda_p()) * self.t_approx).exp();
                let h: Vec<f64> = snap.position_sum().into_iter().map(|v| w * v).collect();
                return Ok(self.evaluate(&h));
            }
        }
        Err(Error::AllExtinct { replicas: max_tries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ou_kernel::Func1D;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slow() -> ModelParams {
        ModelParams::one_dim(1.0, 0.75, 1.0, 1.0).unwrap()
    }

    fn critical() -> ModelParams {
        ModelParams::one_dim(1.0, 0.75, 0.25, 1.0).unwrap()
    }

    fn x() -> SeparableFn {
        SeparableFn::scalar(Func1D::identity())
    }

    #[test]
    fn diagram_counts() {
        let counts: Vec<usize> = (0..=8).map(|n| enumerate_diagrams(n, 8).unwrap().len()).collect();
        let mut inv = vec![1usize, 1];
        for n in 2..=8 {
            inv.push(inv[n - 1] + (n - 1) * inv[n - 2]);
        }
        assert_eq!(counts, inv);
        assert_eq!(counts[2..5], [2, 4, 10]);
        for d in enumerate_diagrams(5, 8).unwrap() {
            let mut all: Vec<usize> = d.edges.iter().flat_map(|&(a, b)| [a, b]).chain(d.unpaired.clone()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..5).collect::<Vec<_>>());
        }
        assert!(enumerate_diagrams(9, 8).is_err());
    }

    #[test]
    fn sigma_slow_examples() {
        let pr = slow();
        let rule = QuadratureRule::invariant(&pr, 64);
        let v = sigma_slow(&x(), &pr, &rule, DEFAULT_TIME_NODES).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        let c = SeparableFn::scalar(Func1D::constant(3.0));
        assert!(sigma_slow(&c, &pr, &rule, DEFAULT_TIME_NODES).unwrap().abs() < 1e-14);
        // large mu: the time integral vanishes
        let pr_big = ModelParams::one_dim(1.0, 0.75, 1e6, 1.0).unwrap();
        let r_big = QuadratureRule::invariant(&pr_big, 64);
        let v = sigma_slow(&x(), &pr_big, &r_big, DEFAULT_TIME_NODES).unwrap();
        assert!(((v - pr_big.stat_var()) / pr_big.stat_var()).abs() < 1e-5);
        assert!(matches!(
            sigma_slow(&x(), &critical(), &rule, 16),
            Err(Error::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn slow_covariance_of_quadratic_matches_closed_form() {
        // h = x^2 - 1/2: T_s h = e^{-2 mu s} h, <phi, h^2> = 2 * (1/2)^2 = 1/2
        let pr = slow();
        let rule = QuadratureRule::invariant(&pr, 64);
        let h = SeparableFn::scalar(Func1D::poly(vec![-0.5, 0.0, 1.0]));
        let v = slow_covariance(&h, &h, &pr, &rule, DEFAULT_TIME_NODES).unwrap();
        let exact = 0.5 + 2.0 * 0.75 * 0.5 / (4.0 - 0.5);
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
        let not_centred = SeparableFn::scalar(Func1D::monomial(2));
        assert!(matches!(
            slow_covariance(&not_centred, &h, &pr, &rule, 32),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn sigma_critical_examples() {
        let pr = critical();
        let rule = QuadratureRule::invariant(&pr, 64);
        assert!((sigma_critical(&x(), &pr, &rule).unwrap() - 3.0).abs() < 1e-12);
        let even = SeparableFn::scalar(Func1D::monomial(2));
        assert!(sigma_critical(&even, &pr, &rule).unwrap().abs() < 1e-14);
        let c = SeparableFn::scalar(Func1D::one());
        assert!(sigma_critical(&c, &pr, &rule).unwrap().abs() < 1e-14);
    }

    #[test]
    fn first_order_variance_of_sum_kernel() {
        // f(x, y) = x + y: Pi_1 f = x, so the variance is 2^2 sigma_slow(x) = 4
        let pr = slow();
        let rule = QuadratureRule::invariant(&pr, 64);
        let one = SeparableFn::scalar(Func1D::one());
        let f = Kernel::tensor_sum(
            2,
            1,
            vec![
                TensorTerm { coeff: 1.0, factors: vec![x(), one.clone()] },
                TensorTerm { coeff: 1.0, factors: vec![one, x()] },
            ],
            true,
        )
        .unwrap();
        assert!((first_order_variance(&f, &pr, &rule, DEFAULT_TIME_NODES).unwrap() - 4.0).abs() < 1e-10);
        let crit = critical();
        let rc = QuadratureRule::invariant(&crit, 64);
        assert!((first_order_variance(&f, &crit, &rc, 16).unwrap() - 12.0).abs() < 1e-10);
        let canon = Kernel::power(x(), 2);
        assert!(first_order_variance(&canon, &pr, &rule, 32).unwrap().abs() < 1e-14);
    }

    #[test]
    fn psd_guard() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(GaussianFamily::from_matrix(vec![x(), x()], m), Err(Error::NotPsd(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-14]);
        assert!(GaussianFamily::from_matrix(vec![x(), x()], m).is_ok());
    }

    #[test]
    fn slow_sampler_first_order() {
        let pr = slow();
        let rule = QuadratureRule::invariant(&pr, 64);
        let lim = SlowLimit::new(&Kernel::power(x(), 1), &pr, &rule, DEFAULT_TIME_NODES).unwrap();
        assert!((lim.family().covariance[(0, 0)] - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| lim.sample(&mut rng)).collect();
        let (_, var) = crate::numeric::mean_var(&draws);
        let se = (2.0 / (n - 1) as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "{var}");
    }

    #[test]
    fn slow_sampler_second_order_mean_is_time_integral() {
        // L = G_h^2 - <h^2, phi>, so E L = 2 lambda p int e^{lambda_p s} <phi, (T_s h)^2> ds
        let pr = slow();
        let rule = QuadratureRule::invariant(&pr, 64);
        let h = SeparableFn::scalar(Func1D::poly(vec![-0.5, 0.0, 1.0]));
        let lim = SlowLimit::new(&Kernel::power(h, 2), &pr, &rule, DEFAULT_TIME_NODES).unwrap();
        let p_hh = 2.0 * 0.75 * 0.5 / (4.0 - 0.5);
        let exact_mean = lim.family().covariance[(0, 1)] - 0.5;
        assert!((exact_mean - p_hh).abs() < 1e-8);
        assert!((lim.evaluate(&[2.0, 2.0]) - 3.5).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| lim.sample(&mut rng)).collect();
        let (m, v) = crate::numeric::mean_var(&draws);
        assert!((m - p_hh).abs() < 4.0 * (v / n as f64).sqrt(), "{m} vs {p_hh}");
    }

    #[test]
    fn slow_sampler_rejects_non_canonical() {
        let pr = slow();
        let rule = QuadratureRule::invariant(&pr, 64);
        let f = Kernel::power(SeparableFn::scalar(Func1D::monomial(2)), 2);
        assert!(matches!(
            SlowLimit::new(&f, &pr, &rule, 32),
            Err(Error::NotCanonical { .. })
        ));
    }

    #[test]
    fn critical_sampler_examples() {
        let pr = critical();
        let rule = QuadratureRule::invariant(&pr, 64);
        let lim = CriticalLimit::new(&Kernel::power(x(), 2), &pr, &rule).unwrap();
        assert!((lim.evaluate(&[2.0, 2.0]) - 4.0).abs() < 1e-15);
        assert!((lim.family().covariance[(0, 1)] - 3.0).abs() < 1e-12);
        // stationary variance 2 here
        let sq = SeparableFn::scalar(Func1D::poly(vec![-2.0, 0.0, 1.0]));
        let lim_even = CriticalLimit::new(&Kernel::power(sq, 1), &pr, &rule).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(lim_even.sample(&mut rng), 0.0);
    }

    #[test]
    fn fast_limit_polynomial() {
        let pr = ModelParams::one_dim(1.0, 0.75, 0.1, 1.0).unwrap();
        let rule = QuadratureRule::invariant(&pr, 64);
        let lim1 = FastLimit::new(&Kernel::power(x(), 1), &pr, &rule, 5.0).unwrap();
        assert!((lim1.evaluate(&[1.7]) - 1.7).abs() < 1e-15);
        let lim2 = FastLimit::new(&Kernel::power(x(), 2), &pr, &rule, 5.0).unwrap();
        assert!((lim2.evaluate(&[1.7]) - 1.7 * 1.7).abs() < 1e-14);
        assert!((default_h_horizon(&pr) - 1000f64.ln() / 0.3).abs() < 1e-12);
    }
}
