//! One-dimensional function descriptors and their separable d-variate sums.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense polynomial, coefficients in ascending order of degree.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Polynomial { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    /// `c * x^k`.
    pub fn monomial(k: usize, c: f64) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = c;
        Polynomial::new(coeffs)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let out = (0..n)
            .map(|i| self.coeffs.get(i).unwrap_or(&0.0) + other.coeffs.get(i).unwrap_or(&0.0))
            .collect();
        Polynomial::new(out)
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|&a| a * c).collect())
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() == 1 {
            return Polynomial::constant(0.0);
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    /// The polynomial `x -> E p(a x + b Z)` with `Z` standard normal.
    pub fn gaussian_smooth(&self, a: f64, b: f64) -> Polynomial {
        let deg = self.degree();
        let mut out = vec![0.0; deg + 1];
        for (k, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            // (a x + b Z)^k = sum_j C(k, j) a^j x^j b^(k-j) Z^(k-j)
            let mut binom = 1.0;
            for j in 0..=k {
                if j > 0 {
                    binom = binom * (k - j + 1) as f64 / j as f64;
                }
                let m = k - j;
                if m % 2 == 0 {
                    out[j] += c * binom * a.powi(j as i32) * b.powi(m as i32) * double_factorial(m);
                }
            }
        }
        Polynomial::new(out)
    }
}

/// `(m - 1)!!`, the `m`-th moment of a standard normal for even `m`.
pub(crate) fn double_factorial(m: usize) -> f64 {
    let mut acc = 1.0;
    let mut k = m as i64 - 1;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// Declared growth of a black-box function at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    /// `|f(x)| = O(|x|^k)`.
    Polynomial(u32),
    /// Faster than any polynomial; not admissible.
    Unbounded,
}

#[derive(Clone)]
pub struct BlackBox {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    growth: Growth,
}

impl BlackBox {
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

impl fmt::Debug for BlackBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlackBox({:?})", self.growth)
    }
}

/// A one-dimensional factor of a kernel.
#[derive(Debug, Clone)]
pub enum Func1D {
    Polynomial(Polynomial),
    /// Probabilists' Hermite polynomial `He_k(x / scale)`.
    Hermite { degree: usize, scale: f64 },
    BlackBox(BlackBox),
}

impl Func1D {
    pub fn poly(coeffs: Vec<f64>) -> Self {
        Func1D::Polynomial(Polynomial::new(coeffs))
    }

    pub fn constant(c: f64) -> Self {
        Func1D::Polynomial(Polynomial::constant(c))
    }

    pub fn one() -> Self {
        Func1D::constant(1.0)
    }

    /// The identity `x -> x`.
    pub fn identity() -> Self {
        Func1D::poly(vec![0.0, 1.0])
    }

    pub fn monomial(k: usize) -> Self {
        Func1D::Polynomial(Polynomial::monomial(k, 1.0))
    }

    pub fn hermite(degree: usize, scale: f64) -> Self {
        Func1D::Hermite { degree, scale }
    }

    pub fn black_box(f: impl Fn(f64) -> f64 + Send + Sync + 'static, growth: Growth) -> Self {
        Func1D::BlackBox(BlackBox {
            f: Arc::new(f),
            growth,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Func1D::Polynomial(p) => p.eval(x),
            Func1D::Hermite { degree, scale } => hermite_he(*degree, x / scale),
            Func1D::BlackBox(b) => b.eval(x),
        }
    }

    /// Exact polynomial form, if the function has one.
    pub fn as_polynomial(&self) -> Option<Polynomial> {
        match self {
            Func1D::Polynomial(p) => Some(p.clone()),
            Func1D::Hermite { degree, scale } => {
                let he = hermite_he_coeffs(*degree);
                let coeffs = he
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| c / scale.powi(k as i32))
                    .collect();
                Some(Polynomial::new(coeffs))
            }
            Func1D::BlackBox(_) => None,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        !matches!(self, Func1D::BlackBox(_))
    }

    /// Polynomial degree, or the declared growth exponent of a black box.
    pub fn growth_degree(&self) -> Option<u32> {
        match self {
            Func1D::Polynomial(p) => Some(p.degree() as u32),
            Func1D::Hermite { degree, .. } => Some(*degree as u32),
            Func1D::BlackBox(b) => match b.growth {
                Growth::Polynomial(k) => Some(k),
                Growth::Unbounded => None,
            },
        }
    }

    pub fn check_admissible(&self) -> Result<()> {
        match self.growth_degree() {
            Some(_) => Ok(()),
            None => Err(Error::GrowthViolation(
                "black box declared super-polynomial growth".into(),
            )),
        }
    }

    pub fn is_constant_one(&self) -> bool {
        matches!(self, Func1D::Polynomial(p) if p.coeffs() == [1.0])
    }

    pub fn mul(&self, other: &Func1D) -> Func1D {
        if self.is_constant_one() {
            return other.clone();
        }
        if other.is_constant_one() {
            return self.clone();
        }
        match (self.as_polynomial(), other.as_polynomial()) {
            (Some(a), Some(b)) => Func1D::Polynomial(a.mul(&b)),
            _ => {
                let growth = match (self.growth_degree(), other.growth_degree()) {
                    (Some(a), Some(b)) => Growth::Polynomial(a + b),
                    _ => Growth::Unbounded,
                };
                let (a, b) = (self.clone(), other.clone());
                Func1D::black_box(move |x| a.eval(x) * b.eval(x), growth)
            }
        }
    }

    pub fn scale(&self, c: f64) -> Func1D {
        match self.as_polynomial() {
            Some(p) => Func1D::Polynomial(p.scale(c)),
            None => {
                let a = self.clone();
                let growth = self
                    .growth_degree()
                    .map_or(Growth::Unbounded, Growth::Polynomial);
                Func1D::black_box(move |x| c * a.eval(x), growth)
            }
        }
    }

    pub fn derivative(&self) -> Result<Func1D> {
        match self {
            Func1D::Hermite { degree, scale } => {
                if *degree == 0 {
                    Ok(Func1D::constant(0.0))
                } else {
                    Ok(Func1D::Hermite {
                        degree: degree - 1,
                        scale: *scale,
                    }
                    .scale(*degree as f64 / scale))
                }
            }
            Func1D::Polynomial(p) => Ok(Func1D::Polynomial(p.derivative())),
            Func1D::BlackBox(_) => Err(Error::NotPolynomial(
                "black-box factors have no analytic derivative".into(),
            )),
        }
    }
}

/// `He_k(x)` by the three-term recurrence.
pub fn hermite_he(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for j in 0..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn hermite_he_coeffs(k: usize) -> Vec<f64> {
    let mut prev = vec![0.0];
    let mut cur = vec![1.0];
    for j in 0..k {
        let mut next = vec![0.0; cur.len() + 1];
        for (i, &c) in cur.iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, &c) in prev.iter().enumerate() {
            next[i] -= j as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// A d-variate function written as a finite sum of coordinatewise products,
/// `sum_r c_r prod_l g_{r,l}(x_l)`.
#[derive(Debug, Clone)]
pub struct SeparableFn {
    dim: usize,
    terms: Vec<(f64, Vec<Func1D>)>,
}

impl SeparableFn {
    pub fn product(coords: Vec<Func1D>) -> Self {
        SeparableFn {
            dim: coords.len(),
            terms: vec![(1.0, coords)],
        }
    }

    /// A one-dimensional function viewed as a separable function of `R^1`.
    pub fn scalar(f: Func1D) -> Self {
        SeparableFn::product(vec![f])
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        SeparableFn {
            dim,
            terms: vec![(c, vec![Func1D::one(); dim])],
        }
    }

    pub fn from_terms(dim: usize, terms: Vec<(f64, Vec<Func1D>)>) -> Result<Self> {
        if terms.iter().any(|(_, c)| c.len() != dim) {
            return Err(Error::InvalidParameter(format!(
                "every separable term needs {dim} coordinate factors"
            )));
        }
        Ok(SeparableFn { dim, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(f64, Vec<Func1D>)] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, coords)| c * coords.iter().zip(x).map(|(g, &xi)| g.eval(xi)).product::<f64>())
            .sum()
    }

    pub fn is_polynomial(&self) -> bool {
        self.terms.iter().all(|(_, c)| c.iter().all(Func1D::is_polynomial))
    }

    pub fn check_admissible(&self) -> Result<()> {
        self.terms
            .iter()
            .flat_map(|(_, c)| c.iter())
            .try_for_each(Func1D::check_admissible)
    }

    /// Largest total degree of any term; black boxes count their growth exponent.
    pub fn max_degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(_, c)| c.iter().map(|g| g.growth_degree().unwrap_or(0)).sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn mul(&self, other: &SeparableFn) -> SeparableFn {
        debug_assert_eq!(self.dim, other.dim);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (a, ga) in &self.terms {
            for (b, gb) in &other.terms {
                let coords = ga.iter().zip(gb).map(|(x, y)| x.mul(y)).collect();
                terms.push((a * b, coords));
            }
        }
        SeparableFn {
            dim: self.dim,
            terms,
        }
    }

    pub fn add(&self, other: &SeparableFn) -> SeparableFn {
        debug_assert_eq!(self.dim, other.dim);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        SeparableFn {
            dim: self.dim,
            terms,
        }
    }

    pub fn scale(&self, c: f64) -> SeparableFn {
        SeparableFn {
            dim: self.dim,
            terms: self.terms.iter().map(|(a, g)| (a * c, g.clone())).collect(),
        }
    }

    pub fn add_constant(&self, c: f64) -> SeparableFn {
        self.add(&SeparableFn::constant(self.dim, c))
    }

    /// Partial derivative along coordinate `l` (0-based).
    pub fn partial(&self, l: usize) -> Result<SeparableFn> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (c, coords) in &self.terms {
            let mut coords = coords.clone();
            coords[l] = coords[l].derivative()?;
            terms.push((*c, coords));
        }
        Ok(SeparableFn {
            dim: self.dim,
            terms,
        })
    }
}
