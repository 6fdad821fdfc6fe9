//! n-variate kernels, Hoeffding projections and degeneracy detection.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ou_kernel::{invariant_integral_separable, Func1D, QuadratureRule, SeparableFn};
use crate::partitions::SetPartition;

pub const DEFAULT_CANONICAL_TOL: f64 = 1e-9;

/// One product term `coeff * f_1(x_1) ... f_n(x_n)`.
#[derive(Debug, Clone)]
pub struct TensorTerm {
    pub coeff: f64,
    pub factors: Vec<SeparableFn>,
}

type KernelFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum KernelForm {
    TensorSum(Vec<TensorTerm>),
    /// Evaluator over the flat argument vector `(x_1, .., x_n)`, each of length `dim`.
    BlackBox(Arc<KernelFn>),
}

impl fmt::Debug for KernelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelForm::TensorSum(t) => f.debug_tuple("TensorSum").field(t).finish(),
            KernelForm::BlackBox(_) => f.write_str("BlackBox"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Kernel {
    arity: usize,
    dim: usize,
    form: KernelForm,
    symmetric: bool,
}

impl Kernel {
    pub fn tensor_sum(
        arity: usize,
        dim: usize,
        terms: Vec<TensorTerm>,
        symmetric: bool,
    ) -> Result<Self> {
        for t in &terms {
            if t.factors.len() != arity {
                return Err(Error::ArityMismatch {
                    kernel: t.factors.len(),
                    expected: arity,
                });
            }
            if let Some(g) = t.factors.iter().find(|g| g.dim() != dim) {
                return Err(Error::DimMismatch {
                    kernel: g.dim(),
                    snapshot: dim,
                });
            }
        }
        Ok(Kernel {
            arity,
            dim,
            form: KernelForm::TensorSum(terms),
            symmetric,
        })
    }

    /// `f_1 (x) .. (x) f_n` for one-dimensional factors. Symmetric when all
    /// factors coincide as polynomials.
    pub fn product_1d(factors: Vec<Func1D>) -> Self {
        let symmetric = match factors.first().and_then(Func1D::as_polynomial) {
            Some(p0) => factors.iter().all(|f| f.as_polynomial().as_ref() == Some(&p0)),
            None => false,
        };
        let arity = factors.len();
        let term = TensorTerm {
            coeff: 1.0,
            factors: factors.into_iter().map(SeparableFn::scalar).collect(),
        };
        Kernel {
            arity,
            dim: 1,
            form: KernelForm::TensorSum(vec![term]),
            symmetric,
        }
    }

    /// `f (x) .. (x) f` with `n` copies of a d-variate factor; symmetric by construction.
    pub fn power(f: SeparableFn, n: usize) -> Self {
        Kernel {
            arity: n,
            dim: f.dim(),
            form: KernelForm::TensorSum(vec![TensorTerm {
                coeff: 1.0,
                factors: vec![f; n],
            }]),
            symmetric: true,
        }
    }

    pub fn constant(arity: usize, dim: usize, c: f64) -> Self {
        Kernel {
            arity,
            dim,
            form: KernelForm::TensorSum(vec![TensorTerm {
                coeff: c,
                factors: vec![SeparableFn::constant(dim, 1.0); arity],
            }]),
            symmetric: true,
        }
    }

    pub fn black_box(
        arity: usize,
        dim: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        symmetric: bool,
    ) -> Self {
        Kernel {
            arity,
            dim,
            form: KernelForm::BlackBox(Arc::new(f)),
            symmetric,
        }
    }

    /// Symmetrization `(1/n!) sum_sigma f(x_sigma)` of a tensor-sum kernel.
    pub fn symmetrized(&self) -> Result<Self> {
        let terms = self.terms().ok_or_else(|| {
            Error::NotPolynomial("symmetrization needs a tensor-sum kernel".into())
        })?;
        let perms = permutations(self.arity);
        let w = 1.0 / perms.len() as f64;
        let mut out = Vec::with_capacity(terms.len() * perms.len());
        for t in terms {
            for p in &perms {
                out.push(TensorTerm {
                    coeff: t.coeff * w,
                    factors: p.iter().map(|&i| t.factors[i].clone()).collect(),
                });
            }
        }
        Kernel::tensor_sum(self.arity, self.dim, out, true)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Overrides the declared symmetry flag.
    pub fn declare_symmetric(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn terms(&self) -> Option<&[TensorTerm]> {
        match &self.form {
            KernelForm::TensorSum(t) => Some(t),
            KernelForm::BlackBox(_) => None,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        self.terms()
            .is_some_and(|ts| ts.iter().all(|t| t.factors.iter().all(SeparableFn::is_polynomial)))
    }

    pub fn check_admissible(&self) -> Result<()> {
        if let Some(ts) = self.terms() {
            for t in ts {
                t.factors.iter().try_for_each(SeparableFn::check_admissible)?;
            }
        }
        Ok(())
    }

    /// Evaluates at the flat argument vector of length `arity * dim`.
    pub fn eval(&self, args: &[f64]) -> f64 {
        debug_assert_eq!(args.len(), self.arity * self.dim);
        match &self.form {
            KernelForm::TensorSum(terms) => terms
                .iter()
                .map(|t| {
                    t.coeff
                        * t.factors
                            .iter()
                            .zip(args.chunks_exact(self.dim.max(1)))
                            .map(|(g, x)| g.eval(x))
                            .product::<f64>()
                })
                .sum(),
            KernelForm::BlackBox(f) => f(args),
        }
    }

    pub fn scale(&self, c: f64) -> Kernel {
        let form = match &self.form {
            KernelForm::TensorSum(terms) => KernelForm::TensorSum(
                terms
                    .iter()
                    .map(|t| TensorTerm {
                        coeff: t.coeff * c,
                        factors: t.factors.clone(),
                    })
                    .collect(),
            ),
            KernelForm::BlackBox(f) => {
                let f = f.clone();
                KernelForm::BlackBox(Arc::new(move |x: &[f64]| c * f(x)))
            }
        };
        Kernel { form, ..self.clone() }
    }

    pub fn add(&self, other: &Kernel) -> Result<Kernel> {
        if self.arity != other.arity {
            return Err(Error::ArityMismatch {
                kernel: other.arity,
                expected: self.arity,
            });
        }
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                kernel: other.dim,
                snapshot: self.dim,
            });
        }
        let symmetric = self.symmetric && other.symmetric;
        let form = match (&self.form, &other.form) {
            (KernelForm::TensorSum(a), KernelForm::TensorSum(b)) => {
                KernelForm::TensorSum(a.iter().chain(b).cloned().collect())
            }
            _ => {
                let (a, b) = (self.clone(), other.clone());
                KernelForm::BlackBox(Arc::new(move |x: &[f64]| a.eval(x) + b.eval(x)))
            }
        };
        Ok(Kernel {
            arity: self.arity,
            dim: self.dim,
            form,
            symmetric,
        })
    }

    /// `<f, phi^{(x) n}>`.
    pub fn invariant_mean(&self, params: &ModelParams, rule: &QuadratureRule) -> Result<f64> {
        self.check_dim(params)?;
        match &self.form {
            KernelForm::TensorSum(terms) => {
                let mut total = 0.0;
                for t in terms {
                    let mut prod = t.coeff;
                    for g in &t.factors {
                        prod *= invariant_integral_separable(g, params, rule)?;
                    }
                    total += prod;
                }
                Ok(total)
            }
            KernelForm::BlackBox(f) => Ok(rule.expect_tensor(self.arity * self.dim, |x| f(x))),
        }
    }

    fn check_dim(&self, params: &ModelParams) -> Result<()> {
        if self.dim != params.dim() {
            return Err(Error::DimMismatch {
                kernel: self.dim,
                snapshot: params.dim(),
            });
        }
        Ok(())
    }

    /// `f - <f, phi^{(x) n}>` written as the sum of its nonconstant Hoeffding
    /// components, so that every factor of a tensor-sum kernel is either
    /// centred or identically one.
    pub fn centered(&self, params: &ModelParams, rule: &QuadratureRule) -> Result<Kernel> {
        match &self.form {
            KernelForm::TensorSum(terms) => {
                let n = self.arity;
                let one = SeparableFn::constant(self.dim, 1.0);
                let mut out = Vec::new();
                for t in terms {
                    let mut means = Vec::with_capacity(n);
                    let mut centred = Vec::with_capacity(n);
                    for g in &t.factors {
                        let m = invariant_integral_separable(g, params, rule)?;
                        means.push(m);
                        centred.push(g.add_constant(-m));
                    }
                    for mask in 1u32..(1u32 << n) {
                        let mut coeff = t.coeff;
                        let mut factors = Vec::with_capacity(n);
                        for i in 0..n {
                            if mask & (1 << i) != 0 {
                                factors.push(centred[i].clone());
                            } else {
                                coeff *= means[i];
                                factors.push(one.clone());
                            }
                        }
                        if coeff != 0.0 {
                            out.push(TensorTerm { coeff, factors });
                        }
                    }
                }
                Kernel::tensor_sum(n, self.dim, out, self.symmetric)
            }
            KernelForm::BlackBox(_) => {
                let c = self.invariant_mean(params, rule)?;
                let f = self.clone();
                Ok(Kernel::black_box(
                    self.arity,
                    self.dim,
                    move |x| f.eval(x) - c,
                    self.symmetric,
                ))
            }
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Subsets of `0..n` are bitmasks.
fn mask_members(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

/// Hoeffding projection `Pi_I f`, an arity-`|I|` kernel in the variables of `I`
/// (in increasing slot order).
pub fn project(
    f: &Kernel,
    subset: &[usize],
    params: &ModelParams,
    rule: &QuadratureRule,
) -> Result<Kernel> {
    f.check_dim(params)?;
    f.check_admissible()?;
    let n = f.arity;
    let mut mask = 0u32;
    for &i in subset {
        if i >= n {
            return Err(Error::InvalidParameter(format!(
                "slot {i} out of range for arity {n}"
            )));
        }
        mask |= 1 << i;
    }
    let members = mask_members(mask, n);
    let k = members.len();
    match &f.form {
        KernelForm::TensorSum(terms) => {
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                let mut coeff = t.coeff;
                let mut factors = Vec::with_capacity(k);
                for (i, g) in t.factors.iter().enumerate() {
                    let m = invariant_integral_separable(g, params, rule)?;
                    if mask & (1 << i) != 0 {
                        factors.push(g.add_constant(-m));
                    } else {
                        coeff *= m;
                    }
                }
                out.push(TensorTerm { coeff, factors });
            }
            Kernel::tensor_sum(k, f.dim, out, f.symmetric)
        }
        KernelForm::BlackBox(func) => {
            // Pi_I f(x_I) = sum_{J <= I} (-1)^{|I \ J|} int f(x_J, y) phi(dy)
            let func = func.clone();
            let rule = rule.clone();
            let dim = f.dim;
            let symmetric = f.symmetric;
            Ok(Kernel::black_box(
                k,
                dim,
                move |x_i: &[f64]| {
                    let mut total = 0.0;
                    for sub in 0u32..(1u32 << k) {
                        let kept: Vec<usize> = (0..k)
                            .filter(|j| sub & (1 << j) != 0)
                            .map(|j| members[j])
                            .collect();
                        let free: Vec<usize> = (0..n).filter(|i| !kept.contains(i)).collect();
                        let sign = if (k - kept.len()) % 2 == 0 { 1.0 } else { -1.0 };
                        let mut args = vec![0.0; n * dim];
                        for (j, &slot) in members.iter().enumerate() {
                            if sub & (1 << j) != 0 {
                                args[slot * dim..(slot + 1) * dim]
                                    .copy_from_slice(&x_i[j * dim..(j + 1) * dim]);
                            }
                        }
                        let avg = rule.expect_tensor(free.len() * dim, |y| {
                            let mut a = args.clone();
                            for (r, &slot) in free.iter().enumerate() {
                                a[slot * dim..(slot + 1) * dim]
                                    .copy_from_slice(&y[r * dim..(r + 1) * dim]);
                            }
                            func(&a)
                        });
                        total += sign * avg;
                    }
                    total
                },
                symmetric,
            ))
        }
    }
}

/// All Hoeffding projections of a kernel, keyed by subset (sorted slot list).
#[derive(Debug, Clone)]
pub struct HoeffdingTable {
    pub arity: usize,
    pub projections: BTreeMap<Vec<usize>, Kernel>,
    pub constant_term: f64,
}

impl HoeffdingTable {
    pub fn build(f: &Kernel, params: &ModelParams, rule: &QuadratureRule) -> Result<Self> {
        let n = f.arity;
        let mut projections = BTreeMap::new();
        for mask in 0u32..(1u32 << n) {
            let members = mask_members(mask, n);
            projections.insert(members.clone(), project(f, &members, params, rule)?);
        }
        let constant_term = f.invariant_mean(params, rule)?;
        Ok(HoeffdingTable {
            arity: n,
            projections,
            constant_term,
        })
    }

    /// `sum_I Pi_I f((x_i)_{i in I})` at the flat point `args`.
    pub fn reconstruct(&self, args: &[f64], dim: usize) -> f64 {
        let mut total = 0.0;
        for (subset, k) in &self.projections {
            let sub_args: Vec<f64> = subset
                .iter()
                .flat_map(|&i| args[i * dim..(i + 1) * dim].iter().copied())
                .collect();
            total += k.eval(&sub_args);
        }
        total
    }
}

/// Deterministic test points spread over a few invariant standard deviations.
pub fn test_points(arity: usize, params: &ModelParams, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let sd = 2.0 * params.stat_sd();
    (0..count)
        .map(|_| {
            (0..arity * params.dim())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect()
        })
        .collect()
}

const TEST_POINT_COUNT: usize = 64;

/// `max |g|` over the test points, relative to `max(1, max |f|)`.
fn relative_sup(g: &Kernel, f: &Kernel, params: &ModelParams) -> f64 {
    let pts = test_points(g.arity, params, TEST_POINT_COUNT);
    let pts_f = test_points(f.arity, params, TEST_POINT_COUNT);
    let sup_g = pts.iter().map(|x| g.eval(x).abs()).fold(0.0, f64::max);
    let sup_f = pts_f.iter().map(|x| f.eval(x).abs()).fold(0.0, f64::max);
    sup_g / sup_f.max(1.0)
}

/// Kernel of arity `n - 1` obtained by averaging slot `k` against the invariant law.
pub fn slot_average(f: &Kernel, k: usize, params: &ModelParams, rule: &QuadratureRule) -> Result<Kernel> {
    let n = f.arity;
    match &f.form {
        KernelForm::TensorSum(terms) => {
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                let m = invariant_integral_separable(&t.factors[k], params, rule)?;
                let mut factors = t.factors.clone();
                factors.remove(k);
                out.push(TensorTerm {
                    coeff: t.coeff * m,
                    factors,
                });
            }
            Kernel::tensor_sum(n - 1, f.dim, out, f.symmetric)
        }
        KernelForm::BlackBox(func) => {
            let func = func.clone();
            let rule = rule.clone();
            let dim = f.dim;
            Ok(Kernel::black_box(
                n - 1,
                dim,
                move |x: &[f64]| {
                    rule.expect_tensor(dim, |y| {
                        let mut a = Vec::with_capacity(n * dim);
                        a.extend_from_slice(&x[..k * dim]);
                        a.extend_from_slice(y);
                        a.extend_from_slice(&x[k * dim..]);
                        func(&a)
                    })
                },
                f.symmetric,
            ))
        }
    }
}

/// Largest relative slot average of the kernel; zero for canonical kernels.
pub fn canonical_residual(f: &Kernel, params: &ModelParams, rule: &QuadratureRule) -> Result<f64> {
    f.check_dim(params)?;
    let mut worst: f64 = 0.0;
    for k in 0..f.arity {
        let avg = slot_average(f, k, params, rule)?;
        worst = worst.max(relative_sup(&avg, f, params));
    }
    Ok(worst)
}

/// True when averaging any single slot against the invariant law gives zero.
pub fn is_canonical(f: &Kernel, params: &ModelParams, rule: &QuadratureRule, tol: f64) -> Result<bool> {
    Ok(canonical_residual(f, params, rule)? <= tol)
}

#[derive(Debug, Clone)]
pub enum Degeneracy {
    /// `Pi_k f` is the first nonvanishing projection; the order is `k - 1`.
    Order { k: usize, projection: Kernel },
    /// Every projection of positive order vanishes: the kernel is constant.
    Constant(f64),
}

impl Degeneracy {
    /// `k`, or `None` for a constant kernel.
    pub fn k(&self) -> Option<usize> {
        match self {
            Degeneracy::Order { k, .. } => Some(*k),
            Degeneracy::Constant(_) => None,
        }
    }

    pub fn order(&self) -> Option<usize> {
        self.k().map(|k| k - 1)
    }
}

/// Smallest `k > 0` with `Pi_{1..k} f` not identically zero.
pub fn degeneracy_order(
    f: &Kernel,
    params: &ModelParams,
    rule: &QuadratureRule,
    tol: f64,
) -> Result<Degeneracy> {
    if !f.symmetric {
        return Err(Error::NotSymmetric);
    }
    for k in 1..=f.arity {
        let subset: Vec<usize> = (0..k).collect();
        let proj = project(f, &subset, params, rule)?;
        if relative_sup(&proj, f, params) > tol {
            return Ok(Degeneracy::Order { k, projection: proj });
        }
    }
    Ok(Degeneracy::Constant(f.invariant_mean(params, rule)?))
}

/// `f_J`: every argument of a block of `J` replaced by one shared variable.
pub fn substitute_partition(f: &Kernel, partition: &SetPartition) -> Result<Kernel> {
    let n = f.arity;
    if partition.ground_size() != n {
        return Err(Error::ArityMismatch {
            kernel: n,
            expected: partition.ground_size(),
        });
    }
    let blocks = partition.blocks();
    let m = blocks.len();
    match &f.form {
        KernelForm::TensorSum(terms) => {
            let out = terms
                .iter()
                .map(|t| TensorTerm {
                    coeff: t.coeff,
                    factors: blocks
                        .iter()
                        .map(|b| {
                            b[1..]
                                .iter()
                                .fold(t.factors[b[0]].clone(), |acc, &i| acc.mul(&t.factors[i]))
                        })
                        .collect(),
                })
                .collect();
            Kernel::tensor_sum(m, f.dim, out, f.symmetric)
        }
        KernelForm::BlackBox(func) => {
            let func = func.clone();
            let labels = partition.labels();
            let dim = f.dim;
            Ok(Kernel::black_box(
                m,
                dim,
                move |x: &[f64]| {
                    let args: Vec<f64> = labels
                        .iter()
                        .flat_map(|&b| x[b * dim..(b + 1) * dim].iter().copied())
                        .collect();
                    func(&args)
                },
                f.symmetric,
            ))
        }
    }
}
