//! Sample summaries and Kolmogorov-Smirnov tests.

use crate::numeric::{compensated_sum, mean_var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    /// Standard error of the mean.
    pub se: f64,
    /// Standard error of the sample variance, from the fourth central moment.
    pub var_se: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    let (mean, var) = mean_var(xs);
    if n < 2 {
        return Summary {
            n,
            mean,
            var,
            se: f64::NAN,
            var_se: f64::NAN,
        };
    }
    let nf = n as f64;
    let m4 = compensated_sum(xs.iter().map(|x| (x - mean).powi(4))) / nf;
    let m2 = var * (nf - 1.0) / nf;
    Summary {
        n,
        mean,
        var,
        se: (var / nf).sqrt(),
        var_se: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
    }
}

/// Pearson correlation; `NaN` when either sample is constant.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let n = xs.len() as f64;
    let cov = compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my))) / (n - 1.0);
    cov / (vx * vy).sqrt()
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // the alternating series converges slowly here; the lower tail form is exact to f64
        let s: f64 = (1..=20)
            .map(|k| {
                let k = (2 * k - 1) as f64;
                (-(k * k) * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp()
            })
            .sum();
        return 1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Upper `alpha` quantile of the Kolmogorov distribution.
pub fn kolmogorov_quantile(alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    /// Supremum distance between the distribution functions.
    pub statistic: f64,
    /// `n` for one sample, `n m / (n + m)` for two.
    pub effective_n: f64,
}

impl KsResult {
    fn scale(&self) -> f64 {
        let s = self.effective_n.sqrt();
        s + 0.12 + 0.11 / s
    }

    /// Asymptotic p-value with the Stephens small-sample correction.
    pub fn p_value(&self) -> f64 {
        kolmogorov_survival(self.scale() * self.statistic)
    }

    /// Largest distance accepted at level `alpha`.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        kolmogorov_quantile(alpha) / self.scale()
    }

    pub fn passes(&self, alpha: f64) -> bool {
        self.statistic <= self.critical_value(alpha)
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let v = sorted(xs);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    KsResult {
        statistic: d,
        effective_n: n,
    }
}

pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> KsResult {
    let a = sorted(xs);
    let b = sorted(ys);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    KsResult {
        statistic: d,
        effective_n: n * m / (n + m),
    }
}
