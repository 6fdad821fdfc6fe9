//! U- and V-statistics of a particle snapshot.

use crate::error::{Error, Result};
use crate::kernels::{degeneracy_order, substitute_partition, Degeneracy, Kernel, KernelForm};
use crate::model::{ModelParams, RegimeKind};
use crate::numeric::{falling_factorial, CompensatedSum};
use crate::ou_kernel::QuadratureRule;
use crate::partitions::{mobius_from_bottom, SetPartition};
use crate::simulator::ParticleSnapshot;

pub const DEFAULT_MAX_ARITY: usize = 6;
pub const DEFAULT_NAIVE_BUDGET: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Direct sum over injective index tuples.
    Naive,
    /// Signed sum of V-statistics of the merged kernels.
    InclusionExclusion,
}

/// Coefficients `a_J` with `U^n(f) = sum_J a_J V^{|J|}(f_J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionExpansion {
    pub n: usize,
    pub terms: Vec<(SetPartition, i64)>,
}

pub fn build_expansion(n: usize, cap: usize) -> Result<PartitionExpansion> {
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    let mut terms = mobius_from_bottom(n);
    terms.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(PartitionExpansion { n, terms })
}

fn check_shapes(snap: &ParticleSnapshot, f: &Kernel) -> Result<()> {
    if f.dim() != snap.dim() {
        return Err(Error::DimMismatch {
            kernel: f.dim(),
            snapshot: snap.dim(),
        });
    }
    if f.arity() == 0 {
        return Err(Error::ArityMismatch {
            kernel: 0,
            expected: 1,
        });
    }
    Ok(())
}

/// Sum of `f` over all index tuples, repetitions included.
pub fn v_statistic(snap: &ParticleSnapshot, f: &Kernel) -> Result<f64> {
    v_statistic_with_budget(snap, f, DEFAULT_NAIVE_BUDGET)
}

pub fn v_statistic_with_budget(snap: &ParticleSnapshot, f: &Kernel, budget: u128) -> Result<f64> {
    check_shapes(snap, f)?;
    match f.form() {
        KernelForm::TensorSum(terms) => {
            let mut total = CompensatedSum::new();
            for t in terms {
                let mut prod = t.coeff;
                for g in &t.factors {
                    let s: CompensatedSum = snap.positions().map(|x| g.eval(x)).collect();
                    prod *= s.value();
                }
                total.add(prod);
            }
            Ok(total.value())
        }
        KernelForm::BlackBox(_) => {
            let m = snap.count() as u128;
            let needed = m.checked_pow(f.arity() as u32).unwrap_or(u128::MAX);
            if needed > budget {
                return Err(Error::BudgetExceeded { needed, budget });
            }
            Ok(tuple_sum(snap, f, false))
        }
    }
}

/// Sum of `f` over tuples of indices, optionally restricted to pairwise distinct ones.
fn tuple_sum(snap: &ParticleSnapshot, f: &Kernel, distinct: bool) -> f64 {
    let n = f.arity();
    let m = snap.count();
    let d = snap.dim();
    if m == 0 || (distinct && m < n) {
        return 0.0;
    }
    let mut idx = vec![0usize; n];
    let mut args = vec![0.0; n * d];
    let mut total = CompensatedSum::new();
    loop {
        let ok = !distinct || (0..n).all(|i| (0..i).all(|j| idx[i] != idx[j]));
        if ok {
            for (i, &j) in idx.iter().enumerate() {
                args[i * d..(i + 1) * d].copy_from_slice(snap.position(j));
            }
            total.add(f.eval(&args));
        }
        let mut k = 0;
        loop {
            if k == n {
                return total.value();
            }
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Sum of `f` over injective index tuples.
pub fn u_statistic(snap: &ParticleSnapshot, f: &Kernel, strategy: Strategy) -> Result<f64> {
    u_statistic_with(snap, f, strategy, DEFAULT_NAIVE_BUDGET, DEFAULT_MAX_ARITY)
}

pub fn u_statistic_with(
    snap: &ParticleSnapshot,
    f: &Kernel,
    strategy: Strategy,
    budget: u128,
    max_arity: usize,
) -> Result<f64> {
    check_shapes(snap, f)?;
    let n = f.arity();
    let m = snap.count();
    if m < n {
        return Ok(0.0);
    }
    match strategy {
        Strategy::Naive => {
            let needed = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
            if needed > budget {
                return Err(Error::BudgetExceeded { needed, budget });
            }
            Ok(tuple_sum(snap, f, true))
        }
        Strategy::InclusionExclusion => {
            let exp = build_expansion(n, max_arity)?;
            u_from_expansion(snap, f, &exp, budget)
        }
    }
}

/// Evaluates `sum_J a_J V(f_J)` for a prebuilt expansion.
pub fn u_from_expansion(
    snap: &ParticleSnapshot,
    f: &Kernel,
    exp: &PartitionExpansion,
    budget: u128,
) -> Result<f64> {
    if exp.n != f.arity() {
        return Err(Error::ArityMismatch {
            kernel: f.arity(),
            expected: exp.n,
        });
    }
    let mut total = CompensatedSum::new();
    for (j, a) in &exp.terms {
        let fj = substitute_partition(f, j)?;
        total.add(*a as f64 * v_statistic_with_budget(snap, &fj, budget)?);
    }
    Ok(total.value())
}

/// Regime- and degeneracy-normalized U-statistic of `f - <f, phi^n>`.
///
/// With `k` the first nonvanishing projection index: slow
/// `|X_t|^{-(n - k/2)} U`, critical `t^{-k/2} |X_t|^{-(n - k/2)} U`, fast
/// `e^{-(lambda_p n - mu k) t} U`.
pub fn hoeffding_normalized(
    snap: &ParticleSnapshot,
    f: &Kernel,
    params: &ModelParams,
    regime: RegimeKind,
    rule: &QuadratureRule,
    tol: f64,
) -> Result<f64> {
    let k = match degeneracy_order(f, params, rule, tol)? {
        Degeneracy::Order { k, .. } => k,
        // f - <f, phi^n> vanishes
        Degeneracy::Constant(_) => return Ok(0.0),
    };
    normalized_with_order(snap, f, k, params, regime, rule)
}

/// As [`hoeffding_normalized`] with the projection index `k` supplied.
pub fn normalized_with_order(
    snap: &ParticleSnapshot,
    f: &Kernel,
    k: usize,
    params: &ModelParams,
    regime: RegimeKind,
    rule: &QuadratureRule,
) -> Result<f64> {
    if snap.is_extinct() {
        return Err(Error::ZeroCount);
    }
    let centred = f.centered(params, rule)?;
    let u = u_statistic(snap, &centred, Strategy::InclusionExclusion)?;
    Ok(u * normalization(snap.count(), snap.t, f.arity(), k, params, regime))
}

/// The factor multiplying `U` in [`normalized_with_order`].
pub fn normalization(
    count: usize,
    t: f64,
    n: usize,
    k: usize,
    params: &ModelParams,
    regime: RegimeKind,
) -> f64 {
    let (n, k) = (n as f64, k as f64);
    let m = count as f64;
    match regime {
        RegimeKind::Slow => m.powf(-(n - k / 2.0)),
        RegimeKind::Critical => t.powf(-k / 2.0) * m.powf(-(n - k / 2.0)),
        RegimeKind::Fast => (-(params.lambda_p() * n - params.mu * k) * t).exp(),
    }
}

/// `U` of the constant kernel one: the number of injective tuples.
pub fn injective_count(count: usize, n: usize) -> f64 {
    falling_factorial(count, n)
}
