//! Exact mixed moments `E_x prod_i <X_t, f_i>` through the expansion over
//! labelled split trees.
//!
//! A tree has a root with one child, binary inner vertices and leaves carrying
//! the blocks of a set partition of the labels. Each inner vertex `i` carries
//! a split time `t_i`, measured as time remaining until the horizon, with
//! `t_i <= t_{p(i)}` and `t_root = t`. Given the split times, leaf positions are
//! jointly Gaussian, so the inner expectation of a polynomial test function is
//! exact; only the split times are integrated numerically.
//!
//! Trees are enumerated with unordered children. The recursion behind the
//! expansion sums over ordered pairs of label sets, and the two children of
//! a vertex always carry distinct label sets, so every unordered tree stands
//! for `2^{inner}` ordered ones.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ou_kernel::{LegendreRule, Polynomial, SeparableFn};

pub const DEFAULT_MAX_LABELS: usize = 4;
pub const DEFAULT_TIME_NODES: usize = 64;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Root,
    Inner,
    /// Leaf carrying a block of labels (0-based).
    Leaf(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub kind: NodeKind,
}

/// Rooted labelled tree; every vertex has a larger index than its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTree {
    nodes: Vec<TreeNode>,
}

/// Shape used during enumeration.
#[derive(Debug, Clone)]
enum Shape {
    Leaf(Vec<usize>),
    Split(Box<Shape>, Box<Shape>),
}

impl LabeledTree {
    fn from_shape(shape: &Shape) -> Self {
        let mut nodes = vec![TreeNode {
            parent: None,
            children: Vec::new(),
            kind: NodeKind::Root,
        }];
        fn push(nodes: &mut Vec<TreeNode>, shape: &Shape, parent: usize) {
            let id = nodes.len();
            nodes[parent].children.push(id);
            match shape {
                Shape::Leaf(b) => nodes.push(TreeNode {
                    parent: Some(parent),
                    children: Vec::new(),
                    kind: NodeKind::Leaf(b.clone()),
                }),
                Shape::Split(a, b) => {
                    nodes.push(TreeNode {
                        parent: Some(parent),
                        children: Vec::new(),
                        kind: NodeKind::Inner,
                    });
                    push(nodes, a, id);
                    push(nodes, b, id);
                }
            }
        }
        push(&mut nodes, shape, 0);
        LabeledTree { nodes }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn inner(&self) -> Vec<usize> {
        self.indices(|k| matches!(k, NodeKind::Inner))
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.indices(|k| matches!(k, NodeKind::Leaf(_)))
    }

    fn indices(&self, pred: impl Fn(&NodeKind) -> bool) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| pred(&self.nodes[i].kind)).collect()
    }

    pub fn label_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.kind {
                NodeKind::Leaf(b) => b.len(),
                _ => 0,
            })
            .sum()
    }

    /// Number of ordered-children trees this unordered tree stands for.
    pub fn multiplicity(&self) -> f64 {
        2f64.powi(self.inner().len() as i32)
    }

    /// Leaf carrying each label.
    pub fn leaf_of_label(&self) -> Vec<usize> {
        let mut out = vec![0; self.label_count()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let NodeKind::Leaf(b) = &n.kind {
                for &a in b {
                    out[a] = i;
                }
            }
        }
        out
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> bool {
        let root_ok = matches!(self.nodes[0].kind, NodeKind::Root) && self.nodes[0].children.len() == 1;
        let shape_ok = self.nodes.iter().enumerate().skip(1).all(|(i, n)| {
            n.parent.is_some_and(|p| p < i)
                && match n.kind {
                    NodeKind::Inner => n.children.len() == 2,
                    NodeKind::Leaf(ref b) => n.children.is_empty() && !b.is_empty(),
                    NodeKind::Root => false,
                }
        });
        let mut labels: Vec<usize> = self
            .nodes
            .iter()
            .flat_map(|n| match &n.kind {
                NodeKind::Leaf(b) => b.clone(),
                _ => Vec::new(),
            })
            .collect();
        labels.sort_unstable();
        let partition_ok = labels.iter().enumerate().all(|(i, &l)| i == l);
        root_ok && shape_ok && partition_ok && self.inner().len() + 1 == self.leaves().len()
    }
}

fn shapes(labels: &[usize]) -> Vec<Shape> {
    let mut out = vec![Shape::Leaf(labels.to_vec())];
    let n = labels.len();
    if n < 2 {
        return out;
    }
    // unordered two-block splits: the first block holds labels[0]
    for mask in 0u32..(1u32 << (n - 1)) {
        let mut a = vec![labels[0]];
        let mut b = Vec::new();
        for (j, &l) in labels[1..].iter().enumerate() {
            if mask & (1 << j) != 0 {
                a.push(l);
            } else {
                b.push(l);
            }
        }
        if b.is_empty() {
            continue;
        }
        let (sa, sb) = (shapes(&a), shapes(&b));
        for x in &sa {
            for y in &sb {
                out.push(Shape::Split(Box::new(x.clone()), Box::new(y.clone())));
            }
        }
    }
    out
}

/// All trees with `n` labels, children unordered.
pub fn enumerate_trees(n: usize, cap: usize) -> Result<Vec<LabeledTree>> {
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one label".into()));
    }
    let labels: Vec<usize> = (0..n).collect();
    Ok(shapes(&labels).iter().map(LabeledTree::from_shape).collect())
}

/// Split-time independent data of a tree and test functions.
struct Prepared {
    leaves: Vec<usize>,
    /// Vertices on the path from the root to each leaf, root excluded.
    paths: Vec<Vec<usize>>,
    /// Per coordinate-combination job: coefficient and, per coordinate, the
    /// monomial expansion `(coeff, exponents per leaf)` around the mean.
    jobs: Vec<(f64, Vec<Vec<(f64, Vec<usize>)>>)>,
    max_deg: Vec<usize>,
}

fn shift_polynomial(p: &Polynomial, m: f64) -> Vec<f64> {
    // coefficients of y -> p(m + y)
    let c = p.coeffs();
    let mut out = vec![0.0; c.len()];
    for (k, &ck) in c.iter().enumerate() {
        if ck == 0.0 {
            continue;
        }
        let mut binom = 1.0;
        for j in 0..=k {
            if j > 0 {
                binom = binom * (k - j + 1) as f64 / j as f64;
            }
            out[j] += ck * binom * m.powi((k - j) as i32);
        }
    }
    out
}

fn prepare(tree: &LabeledTree, t: f64, params: &ModelParams, fs: &[SeparableFn]) -> Result<Prepared> {
    let n = tree.label_count();
    if fs.len() != n {
        return Err(Error::ArityMismatch {
            kernel: fs.len(),
            expected: n,
        });
    }
    let dim = params.dim();
    for f in fs {
        if f.dim() != dim {
            return Err(Error::DimMismatch {
                kernel: f.dim(),
                snapshot: dim,
            });
        }
        if !f.is_polynomial() {
            return Err(Error::NotPolynomial("the oracle handles polynomial factors only".into()));
        }
    }
    let leaves = tree.leaves();
    let leaf_pos = |node: usize| leaves.iter().position(|&l| l == node).expect("leaf");
    let label_leaf: Vec<usize> = tree.leaf_of_label().into_iter().map(leaf_pos).collect();

    // node ids on each leaf's path, excluding the root itself
    let paths = leaves
        .iter()
        .map(|&l| {
            let mut p = Vec::new();
            let mut cur = l;
            while let Some(par) = tree.nodes[cur].parent {
                p.push(cur);
                cur = par;
            }
            p.reverse();
            p
        })
        .collect();

    let decay = (-params.mu * t).exp();
    let nl = leaves.len();
    let mut jobs = Vec::new();
    let mut max_deg = vec![0usize; nl];
    // iterate over every choice of separable term per label
    let counts: Vec<usize> = fs.iter().map(|f| f.terms().len()).collect();
    if counts.contains(&0) {
        return Ok(Prepared {
            leaves,
            paths,
            jobs,
            max_deg,
        });
    }
    let mut choice = vec![0usize; n];
    loop {
        let mut coeff = 1.0;
        for (a, &c) in choice.iter().enumerate() {
            coeff *= fs[a].terms()[c].0;
        }
        let mut per_coord = Vec::with_capacity(dim);
        for l in 0..dim {
            let mut leaf_poly = vec![Polynomial::constant(1.0); nl];
            for (a, &c) in choice.iter().enumerate() {
                let g = fs[a].terms()[c].1[l].as_polynomial().expect("checked polynomial");
                leaf_poly[label_leaf[a]] = leaf_poly[label_leaf[a]].mul(&g);
            }
            let mean = params.x0[l] * decay;
            let shifted: Vec<Vec<f64>> = leaf_poly.iter().map(|p| shift_polynomial(p, mean)).collect();
            for (i, s) in shifted.iter().enumerate() {
                max_deg[i] = max_deg[i].max(s.len() - 1);
            }
            // expand the product over leaves into monomials
            let mut monos = vec![(1.0, Vec::<usize>::new())];
            for s in &shifted {
                let mut next = Vec::new();
                for (c0, e0) in &monos {
                    for (k, &ck) in s.iter().enumerate() {
                        if ck != 0.0 {
                            let mut e = e0.clone();
                            e.push(k);
                            next.push((c0 * ck, e));
                        }
                    }
                }
                monos = next;
            }
            per_coord.push(monos);
        }
        if coeff != 0.0 {
            jobs.push((coeff, per_coord));
        }
        let mut a = 0;
        loop {
            if a == n {
                return Ok(Prepared {
                    leaves,
                    paths,
                    jobs,
                    max_deg,
                });
            }
            choice[a] += 1;
            if choice[a] < counts[a] {
                break;
            }
            choice[a] = 0;
            a += 1;
        }
    }
}

/// Moments `E prod_i Y_i^{k_i}` of a centred Gaussian vector with covariance
/// `cov`, for all `k <= max_deg`, in mixed-radix order.
fn centred_moment_table(cov: &[Vec<f64>], max_deg: &[usize]) -> Vec<f64> {
    let dims: Vec<usize> = max_deg.iter().map(|d| d + 1).collect();
    let size: usize = dims.iter().product();
    let mut strides = vec![1usize; dims.len()];
    for i in 1..dims.len() {
        strides[i] = strides[i - 1] * dims[i - 1];
    }
    let mut table = vec![0.0; size];
    let mut k = vec![0usize; dims.len()];
    for idx in 0..size {
        // decode
        let mut r = idx;
        for (i, &d) in dims.iter().enumerate() {
            k[i] = r % d;
            r /= d;
        }
        if idx == 0 {
            table[0] = 1.0;
            continue;
        }
        let i = k.iter().position(|&v| v > 0).expect("nonzero index");
        let base = idx - strides[i];
        // E Y_i Y^{k - e_i} = sum_j C_ij d/dY_j
        let mut v = 0.0;
        for j in 0..dims.len() {
            let kj = if j == i { k[j] - 1 } else { k[j] };
            if kj > 0 && cov[i][j] != 0.0 {
                v += cov[i][j] * kj as f64 * table[base - strides[j]];
            }
        }
        table[idx] = v;
    }
    table
}

fn leaf_covariance(prep: &Prepared, times: &[f64], params: &ModelParams, tree: &LabeledTree) -> Vec<Vec<f64>> {
    let s2 = params.stat_var();
    let nl = prep.leaves.len();
    let edge_var = |v: usize| {
        let u = tree.nodes[v].parent.expect("non-root");
        s2 * ((-2.0 * params.mu * times[v]).exp() - (-2.0 * params.mu * times[u]).exp())
    };
    let mut cov = vec![vec![0.0; nl]; nl];
    for a in 0..nl {
        for b in a..nl {
            let (pa, pb) = (&prep.paths[a], &prep.paths[b]);
            let mut c = 0.0;
            for (x, y) in pa.iter().zip(pb) {
                if x != y {
                    break;
                }
                c += edge_var(*x);
            }
            cov[a][b] = c;
            cov[b][a] = c;
        }
    }
    cov
}

fn evaluate_prepared(prep: &Prepared, cov: &[Vec<f64>]) -> f64 {
    let table = centred_moment_table(cov, &prep.max_deg);
    let mut strides = vec![1usize; prep.max_deg.len()];
    for i in 1..strides.len() {
        strides[i] = strides[i - 1] * (prep.max_deg[i - 1] + 1);
    }
    let mut total = 0.0;
    for (coeff, per_coord) in &prep.jobs {
        let mut prod = *coeff;
        for monos in per_coord {
            let mut s = 0.0;
            for (c, e) in monos {
                let idx: usize = e.iter().zip(&strides).map(|(k, st)| k * st).sum();
                s += c * table[idx];
            }
            prod *= s;
            if prod == 0.0 {
                break;
            }
        }
        total += prod;
    }
    total
}

/// Node times with the root at `t`, leaves at 0 and the inner vertices at `split_times`
/// (in increasing node order).
fn node_times(tree: &LabeledTree, t: f64, split_times: &[f64]) -> Result<Vec<f64>> {
    let inner = tree.inner();
    if inner.len() != split_times.len() {
        return Err(Error::InvalidParameter(format!(
            "tree has {} inner vertices, got {} split times",
            inner.len(),
            split_times.len()
        )));
    }
    let mut times = vec![0.0; tree.nodes.len()];
    times[0] = t;
    for (&i, &s) in inner.iter().zip(split_times) {
        times[i] = s;
    }
    for &i in &inner {
        let p = tree.nodes[i].parent.expect("inner vertex has a parent");
        if times[i] < 0.0 || times[i] > times[p] {
            return Err(Error::InvalidParameter(
                "split times violate 0 <= t_i <= t_{p(i)}".into(),
            ));
        }
    }
    Ok(times)
}

/// `E prod_a f_a(Z_{leaf(a)})` for fixed split times.
pub fn gaussian_position_moments(
    tree: &LabeledTree,
    t: f64,
    split_times: &[f64],
    params: &ModelParams,
    fs: &[SeparableFn],
) -> Result<f64> {
    let prep = prepare(tree, t, params, fs)?;
    let times = node_times(tree, t, split_times)?;
    let cov = leaf_covariance(&prep, &times, params, tree);
    Ok(evaluate_prepared(&prep, &cov))
}

/// Accuracy controls of the split-time integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub time_nodes: usize,
    pub rel_tol: f64,
    pub max_labels: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            time_nodes: DEFAULT_TIME_NODES,
            rel_tol: DEFAULT_REL_TOL,
            max_labels: DEFAULT_MAX_LABELS,
        }
    }
}

/// Returns (integral, integral of the absolute integrand).
fn integrate_tree(
    tree: &LabeledTree,
    prep: &Prepared,
    t: f64,
    params: &ModelParams,
    rule: &LegendreRule,
) -> (f64, f64) {
    let inner = tree.inner();
    let lp = params.lambda_p();
    let mut times = vec![0.0; tree.nodes.len()];
    times[0] = t;

    fn recurse(
        level: usize,
        inner: &[usize],
        times: &mut Vec<f64>,
        tree: &LabeledTree,
        prep: &Prepared,
        params: &ModelParams,
        rule: &LegendreRule,
        lp: f64,
    ) -> (f64, f64) {
        if level == inner.len() {
            let cov = leaf_covariance(prep, times, params, tree);
            let v = evaluate_prepared(prep, &cov);
            return (v, v.abs());
        }
        let node = inner[level];
        let upper = times[tree.nodes[node].parent.expect("inner vertex has a parent")];
        let mut acc = (0.0, 0.0);
        let pts: Vec<(f64, f64)> = rule.on(0.0, upper).collect();
        for (s, w) in pts {
            times[node] = s;
            let (v, a) = recurse(level + 1, inner, times, tree, prep, params, rule, lp);
            let ww = w * (lp * s).exp();
            acc.0 += ww * v;
            acc.1 += ww * a;
        }
        acc
    }

    let (v, a) = recurse(0, &inner, &mut times, tree, prep, params, rule, lp);
    let pre = (params.p * params.lambda).powi(inner.len() as i32) * (lp * t).exp();
    (pre * v, pre * a)
}

/// `S(tau, t, x0)` for one tree with unordered children (multiplicity not applied).
pub fn tree_contribution(
    tree: &LabeledTree,
    t: f64,
    params: &ModelParams,
    fs: &[SeparableFn],
    opts: &OracleOptions,
) -> Result<f64> {
    params.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {t}")));
    }
    let prep = prepare(tree, t, params, fs)?;
    if tree.inner().is_empty() {
        return Ok(integrate_tree(tree, &prep, t, params, &LegendreRule::new(1)).0);
    }
    let fine = LegendreRule::new(opts.time_nodes);
    let coarse = LegendreRule::new((opts.time_nodes / 2).max(1));
    let (v, abs) = integrate_tree(tree, &prep, t, params, &fine);
    let (vc, _) = integrate_tree(tree, &prep, t, params, &coarse);
    let estimate = (v - vc).abs();
    let scale = v.abs().max(abs);
    if estimate > opts.rel_tol * scale {
        return Err(Error::QuadratureFailure {
            tol: opts.rel_tol,
            estimate: if scale > 0.0 { estimate / scale } else { estimate },
        });
    }
    Ok(v)
}

/// `E_x prod_i <X_t, f_i>`, i.e. the mean of the V-statistic of `f_1 (x) .. (x) f_n`.
pub fn exact_mixed_moment(
    t: f64,
    params: &ModelParams,
    fs: &[SeparableFn],
    opts: &OracleOptions,
) -> Result<f64> {
    let trees = enumerate_trees(fs.len(), opts.max_labels)?;
    let parts: Result<Vec<f64>> = trees
        .par_iter()
        .map(|tr| Ok(tr.multiplicity() * tree_contribution(tr, t, params, fs, opts)?))
        .collect();
    Ok(parts?.iter().sum())
}
