//! Gaussian quadrature rules.
//!
//! Nodes are found by Newton iteration on the orthonormal three-term
//! recurrences, which stays accurate well past the 128-node rules used here.

use crate::model::ModelParams;

/// Default node count for integrals against the invariant measure.
pub const DEFAULT_SPACE_NODES: usize = 64;

/// Probability-weighted rule for a one-dimensional centred Gaussian.
///
/// With `n` nodes it integrates polynomials up to degree `2n - 1` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Rule for the standard normal law.
    pub fn standard_normal(n: usize) -> Self {
        let (x, w) = gauss_hermite_physicists(n);
        let norm = std::f64::consts::PI.sqrt();
        QuadratureRule {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v / norm).collect(),
        }
    }

    /// Rule for a centred normal law with standard deviation `sd`.
    pub fn normal(n: usize, sd: f64) -> Self {
        let mut rule = Self::standard_normal(n);
        rule.nodes.iter_mut().for_each(|x| *x *= sd);
        rule
    }

    /// Rule for one coordinate of the OU invariant measure (variance `sigma^2 / 2mu`).
    pub fn invariant(params: &ModelParams, n: usize) -> Self {
        Self::normal(n, params.stat_sd())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Highest polynomial degree integrated exactly.
    pub fn exactness(&self) -> usize {
        2 * self.nodes.len() - 1
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Expectation of a function of `dim` independent coordinates over the
    /// tensor-product grid.
    pub fn expect_tensor(&self, dim: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
        let n = self.nodes.len();
        let mut idx = vec![0usize; dim];
        let mut point = vec![0.0; dim];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                point[k] = self.nodes[i];
                w *= self.weights[i];
            }
            total += w * f(&point);
            // odometer increment
            let mut k = 0;
            loop {
                if k == dim {
                    return total;
                }
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LegendreRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        LegendreRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Nodes and weights for the weight `exp(-x^2)`.
fn gauss_hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ou_kernel::func::double_factorial;

    #[test]
    fn normal_rule_is_exact_on_moments() {
        for &n in &[1usize, 2, 5, 16, 64, 128] {
            let rule = QuadratureRule::standard_normal(n);
            let total: f64 = rule.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "n={n}: {total}");
            for k in 0..=(2 * n - 1).min(40) {
                let m = rule.expect(|x| x.powi(k as i32));
                let exact = if k % 2 == 0 { double_factorial(k) } else { 0.0 };
                // odd moments cancel terms of the size of the next even moment
                let scale = double_factorial(k + k % 2);
                assert!(
                    (m - exact).abs() <= 1e-11 * scale,
                    "n={n} k={k}: {m} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn scaled_rule_matches_variance() {
        let rule = QuadratureRule::normal(64, 0.5f64.sqrt());
        assert!((rule.expect(|x| x * x) - 0.5).abs() < 1e-14);
        assert!(rule.expect(|x| x).abs() < 1e-14);
        assert!((rule.expect(|x| x.powi(4)) - 0.75).abs() < 1e-13);
    }

    #[test]
    fn tensor_expectation() {
        let rule = QuadratureRule::standard_normal(8);
        let v = rule.expect_tensor(2, |x| x[0] * x[0] * x[1] * x[1] + x[0]);
        assert!((v - 1.0).abs() < 1e-13);
        let v3 = rule.expect_tensor(3, |x| (x[0] + x[1] + x[2]).powi(2));
        assert!((v3 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn legendre_exactness() {
        for &n in &[1usize, 3, 32, 64, 128] {
            let rule = LegendreRule::new(n);
            for k in 0..(2 * n).min(30) {
                let v = rule.integrate(0.0, 2.0, |x| x.powi(k as i32));
                let exact = 2f64.powi(k as i32 + 1) / (k as f64 + 1.0);
                assert!((v - exact).abs() < 1e-12 * exact, "n={n} k={k}");
            }
        }
        let rule = LegendreRule::new(64);
        let v = rule.integrate(0.0, 3.0, |x| (-x).exp());
        assert!((v - (1.0 - (-3.0f64).exp())).abs() < 1e-14);
    }
}
