//! Replica farms and the individual experiment runners.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Exp};

use super::config::{ExperimentConfig, TestKind};
use super::report::{Check, Record, TestReport};
use super::stats::{correlation, ks_one_sample, ks_two_sample, summarize};
use crate::error::{Error, Result};
use crate::kernels::{canonical_residual, degeneracy_order, Degeneracy, Kernel};
use crate::limits::{
    default_h_horizon, first_order_variance, CriticalLimit, FastLimit, SlowLimit, DEFAULT_TIME_NODES,
};
use crate::model::{ModelParams, RegimeKind};
use crate::numeric::falling_factorial;
use crate::ou_kernel::{QuadratureRule, DEFAULT_SPACE_NODES};
use crate::simulator::{
    mix_key, replica_key, simulate, simulate_grid, Caps, ParticleSnapshot, TrajectoryObservables,
};
use crate::tree_oracle::{exact_mixed_moment, OracleOptions};
use crate::ustats::{normalization, u_statistic_with, v_statistic, Strategy, DEFAULT_NAIVE_BUDGET};

/// Stream index reserved for limit-law samples, disjoint from replica keys.
const LIMIT_STREAM: u64 = 0x4c49_4d49_5453;
/// Largest arity handled by the oracle cross-check.
pub const ORACLE_MAX_ARITY: usize = 3;
const FAST_SAMPLER_TRIES: usize = 1000;

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    params: ModelParams,
    kernel: Kernel,
    rule: QuadratureRule,
    caps: Caps,
    pool: rayon::ThreadPool,
    hash: String,
    start: Instant,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.model.clone();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Ctx {
            cfg,
            kernel: cfg.kernel()?,
            rule: QuadratureRule::invariant(&params, DEFAULT_SPACE_NODES),
            params,
            caps: cfg.caps(),
            pool,
            hash: cfg.hash(),
            start: Instant::now(),
        })
    }

    fn key(&self, replica: u64) -> u64 {
        replica_key(self.cfg.run.seed, replica)
    }

    /// Runs `f` for every replica on the worker pool; results come back in
    /// replica order, so downstream sums do not depend on scheduling.
    fn farm<T: Send>(&self, n: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        self.pool.install(|| (0..n as u64).into_par_iter().map(&f).collect())
    }

    fn regime_name(&self) -> Result<&'static str> {
        Ok(self.params.regime()?.kind.name())
    }

    fn report(&self, test: TestKind, survivors: usize, checks: Vec<Check>, records: Vec<Record>) -> Result<TestReport> {
        let replicas = self.cfg.run.replicas;
        Ok(TestReport {
            test: test.name().into(),
            regime: self.regime_name()?.into(),
            config_hash: self.hash.clone(),
            seed: self.cfg.run.seed,
            replicas,
            survivors,
            survival_fraction: survivors as f64 / replicas as f64,
            checks,
            records: if self.cfg.run.records { records } else { Vec::new() },
            runtime_secs: self.start.elapsed().as_secs_f64(),
        })
    }

    fn u_stat(&self, snap: &ParticleSnapshot, f: &Kernel) -> Result<f64> {
        u_statistic_with(
            snap,
            f,
            Strategy::InclusionExclusion,
            DEFAULT_NAIVE_BUDGET,
            self.cfg.caps.max_arity,
        )
    }
}

fn rec(replica: u64, t: f64, statistic: &str, value: f64) -> Record {
    Record {
        replica,
        t,
        statistic: statistic.into(),
        value,
    }
}

/// `U_t^n(f) / (|X_t|)_n` on survivors at the final grid time, against
/// `<f, phi^n>`. The falling factorial counts injective tuples, so `f = 1`
/// gives exactly one.
pub fn run_lln(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ctx = Ctx::new(cfg)?;
    let t = cfg.t_final();
    let n = ctx.kernel.arity();
    let expected = ctx.kernel.invariant_mean(&ctx.params, &ctx.rule)?;
    let rows = ctx.farm(cfg.run.replicas, |r| {
        let snap = simulate(&ctx.params, t, ctx.key(r), &ctx.caps)?;
        let m = snap.count();
        if m == 0 {
            return Ok(None);
        }
        let stat = if m >= n {
            Some(ctx.u_stat(&snap, &ctx.kernel)? / falling_factorial(m, n))
        } else {
            None
        };
        Ok(Some((r, m, stat)))
    })?;
    let alive: Vec<_> = rows.into_iter().flatten().collect();
    if alive.is_empty() {
        return Err(Error::AllExtinct {
            replicas: cfg.run.replicas,
        });
    }
    let mut records = Vec::new();
    let mut values = Vec::new();
    for &(r, m, stat) in &alive {
        records.push(rec(r, t, "count", m as f64));
        if let Some(v) = stat {
            records.push(rec(r, t, "lln_statistic", v));
            values.push(v);
        }
    }
    let s = summarize(&values);
    let checks = vec![
        Check::within_se("lln_mean", s.mean, expected, s.se, cfg.tolerances.se_multiple),
        Check::info("too_small_for_arity", (alive.len() - values.len()) as f64),
    ];
    ctx.report(TestKind::Lln, alive.len(), checks, records)
}

/// KS test of `e^{-lambda_p t} |X_t|` on survivors against the exponential law of
/// `W`, plus survival fraction and martingale mean.
pub fn run_w_law(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ctx = Ctx::new(cfg)?;
    let t = cfg.t_final();
    let d = ctx.params.derive()?;
    if (-d.lambda_p * t).exp() >= 0.05 {
        return Err(Error::Config(format!(
            "W-law test needs exp(-lambda_p t) < 0.05, got {:.4} at t = {t}",
            (-d.lambda_p * t).exp()
        )));
    }
    let counts = ctx.farm(cfg.run.replicas, |r| {
        Ok(simulate(&ctx.params, t, ctx.key(r), &ctx.caps)?.count())
    })?;
    let scale = (-d.lambda_p * t).exp();
    let v_all: Vec<f64> = counts.iter().map(|&m| scale * m as f64).collect();
    let w: Vec<f64> = v_all.iter().copied().filter(|&v| v > 0.0).collect();
    if w.is_empty() {
        return Err(Error::AllExtinct {
            replicas: cfg.run.replicas,
        });
    }
    let tol = &cfg.tolerances;
    let law = Exp::new(d.w_rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let ks = ks_one_sample(&w, |x| law.cdf(x));
    let n_all = counts.len() as f64;
    let survive = 1.0 - d.extinction_by(t);
    let frac = w.len() as f64 / n_all;
    let ws = summarize(&w);
    let vs = summarize(&v_all);
    let checks = vec![
        Check::at_most(
            "ks_distance",
            ks.statistic,
            ks.critical_value(tol.ks_level),
            &format!("KS level {}", tol.ks_level),
        ),
        Check::info("ks_p_value", ks.p_value()),
        Check::within_se("w_mean", ws.mean, 1.0 / survive, ws.se, tol.se_multiple),
        Check::within_se(
            "survival_fraction",
            frac,
            survive,
            (survive * (1.0 - survive) / n_all).sqrt(),
            tol.survival_se_multiple,
        ),
        Check::within_se("v_mean_all", vs.mean, 1.0, vs.se, tol.se_multiple),
    ];
    let records = counts
        .iter()
        .enumerate()
        .map(|(r, &m)| rec(r as u64, t, "count", m as f64))
        .collect();
    ctx.report(TestKind::Wlaw, w.len(), checks, records)
}

/// Means of the martingales `V_t` and `H_t` over all replicas at every grid time.
pub fn run_martingale(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ctx = Ctx::new(cfg)?;
    let grid = &cfg.run.t_grid;
    let paths: Vec<TrajectoryObservables> = ctx.farm(cfg.run.replicas, |r| {
        let snaps = simulate_grid(&ctx.params, grid, ctx.key(r), &ctx.caps)?;
        Ok(TrajectoryObservables::from_snapshots(&ctx.params, &snaps))
    })?;
    let k = cfg.tolerances.se_multiple;
    let mut checks = Vec::new();
    let mut records = Vec::new();
    for (i, &t) in grid.iter().enumerate() {
        let v: Vec<f64> = paths.iter().map(|p| p.v_vals[i]).collect();
        let s = summarize(&v);
        checks.push(Check::within_se(&format!("v_mean@{t}"), s.mean, 1.0, s.se, k));
        for (c, &x0) in ctx.params.x0.iter().enumerate() {
            let h: Vec<f64> = paths.iter().map(|p| p.h_vals[i][c]).collect();
            let s = summarize(&h);
            checks.push(Check::within_se(&format!("h{c}_mean@{t}"), s.mean, x0, s.se, k));
        }
        for (r, p) in paths.iter().enumerate() {
            records.push(rec(r as u64, t, "v", p.v_vals[i]));
            for (c, h) in p.h_vals[i].iter().enumerate() {
                records.push(rec(r as u64, t, &format!("h{c}"), *h));
            }
        }
    }
    let survivors = paths.iter().filter(|p| p.counts.last().is_some_and(|&c| c > 0)).count();
    ctx.report(TestKind::Martingale, survivors, checks, records)
}

struct CltRow {
    replica: u64,
    count: usize,
    stat: f64,
    v_now: f64,
    v_end: f64,
    g1: f64,
    h: Vec<f64>,
}

/// Regime-normalized U-statistic of a canonical kernel on survivors against a
/// same-size sample of the limit law, with the second coordinate `G_1` and
/// the asymptotic independence checks.
pub fn run_clt(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ctx = Ctx::new(cfg)?;
    let params = &ctx.params;
    let regime = params.regime()?;
    if let Some(expected) = cfg.run.regime {
        regime.require(expected)?;
    }
    let f = &ctx.kernel;
    let residual = canonical_residual(f, params, &ctx.rule)?;
    if residual > cfg.tolerances.canonical_tol {
        return Err(Error::NotCanonical { residual });
    }
    let n = f.arity();
    let lp = params.lambda_p();
    let t = cfg.t_final();
    let gap = cfg.run.t_max_gap.unwrap_or(2.0 / lp);
    let t_max = t + gap;
    let rows = ctx.farm(cfg.run.replicas, |r| {
        let snaps = simulate_grid(params, &[t, t_max], ctx.key(r), &ctx.caps)?;
        let (now, end) = (&snaps[0], &snaps[1]);
        let m = now.count();
        if m == 0 {
            return Ok(None);
        }
        let u = ctx.u_stat(now, f)?;
        let stat = u * normalization(m, t, n, n, params, regime.kind);
        let v_end = (-lp * t_max).exp() * end.count() as f64;
        let mf = m as f64;
        let g1 = (mf - (lp * t).exp() * v_end) / mf.sqrt();
        let w = ((params.mu - lp) * t).exp();
        let h = now.position_sum().into_iter().map(|x| w * x).collect();
        Ok(Some(CltRow {
            replica: r,
            count: m,
            stat,
            v_now: (-lp * t).exp() * mf,
            v_end,
            g1,
            h,
        }))
    })?;
    let alive: Vec<CltRow> = rows.into_iter().flatten().collect();
    if alive.is_empty() {
        return Err(Error::AllExtinct {
            replicas: cfg.run.replicas,
        });
    }
    let s_count = alive.len();
    let stats: Vec<f64> = alive.iter().map(|a| a.stat).collect();
    let g1: Vec<f64> = alive.iter().map(|a| a.g1).collect();
    let v_now: Vec<f64> = alive.iter().map(|a| a.v_now).collect();

    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    let limit_sample: Vec<f64> = match regime.kind {
        RegimeKind::Slow => {
            let lim = SlowLimit::new(f, params, &ctx.rule, DEFAULT_TIME_NODES)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_key(cfg.run.seed, LIMIT_STREAM));
            (0..s_count).map(|_| lim.sample(&mut rng)).collect()
        }
        RegimeKind::Critical => {
            let lim = CriticalLimit::new(f, params, &ctx.rule)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_key(cfg.run.seed, LIMIT_STREAM));
            (0..s_count).map(|_| lim.sample(&mut rng)).collect()
        }
        RegimeKind::Fast => {
            let horizon = cfg.run.limit_horizon.unwrap_or_else(|| default_h_horizon(params));
            let lim = FastLimit::new(f, params, &ctx.rule, horizon)?;
            let root = mix_key(cfg.run.seed, LIMIT_STREAM);
            let same: Vec<f64> = alive.iter().map(|a| lim.evaluate(&a.h)).collect();
            let rho = correlation(&stats, &same);
            checks.push(Check::at_least(
                "same_trajectory_correlation",
                rho,
                tol.fast_correlation,
                "lower bound",
            ));
            ctx.farm(s_count, |i| {
                lim.sample_conditioned(replica_key(root, i), &ctx.caps, FAST_SAMPLER_TRIES)
            })?
        }
    };

    let ks = ks_two_sample(&stats, &limit_sample);
    checks.push(Check::at_most(
        "ks_two_sample",
        ks.statistic,
        ks.critical_value(tol.ks_level),
        &format!("KS level {}", tol.ks_level),
    ));
    checks.push(Check::info("ks_p_value", ks.p_value()));
    let a = summarize(&stats);
    let b = summarize(&limit_sample);
    checks.push(Check::within_se(
        "mean",
        a.mean,
        b.mean,
        (a.se * a.se + b.se * b.se).sqrt(),
        tol.se_multiple,
    ));
    checks.push(Check::within_se(
        "variance",
        a.var,
        b.var,
        (a.var_se * a.var_se + b.var_se * b.var_se).sqrt(),
        tol.se_multiple,
    ));
    // Exact variance of G_1 given the finite gap T_max - t.
    let g1_expected = -(-lp * gap).exp_m1() / (2.0 * params.p - 1.0);
    let g = summarize(&g1);
    checks.push(Check::within_se("g1_variance", g.var, g1_expected, g.var_se, tol.g1_se_multiple));
    // the bound is stated for ~10^4 replicas; smaller samples get k / sqrt(n)
    let bound = tol.correlation_bound.max(tol.se_multiple / (s_count as f64).sqrt());
    let rule = format!("|rho| <= max({}, {} / sqrt(n))", tol.correlation_bound, tol.se_multiple);
    let rule = rule.as_str();
    // the first coordinate is e^{-lambda_p t} |X_t|; in the fast regime only
    // G_1 is independent of the other two
    checks.push(Check::at_most("corr_w_g1", correlation(&v_now, &g1).abs(), bound, rule));
    checks.push(Check::at_most("corr_g1_limit", correlation(&g1, &stats).abs(), bound, rule));
    if regime.kind != RegimeKind::Fast {
        checks.push(Check::at_most("corr_w_limit", correlation(&v_now, &stats).abs(), bound, rule));
    }

    let mut records = Vec::with_capacity(4 * s_count);
    for a in &alive {
        records.push(rec(a.replica, t, "count", a.count as f64));
        records.push(rec(a.replica, t, "statistic", a.stat));
        records.push(rec(a.replica, t, "g1", a.g1));
        records.push(rec(a.replica, t_max, "v", a.v_end));
    }
    ctx.report(TestKind::Clt, s_count, checks, records)
}

/// Monte Carlo mean of `V_t^n(f)` over all replicas against the tree oracle at
/// every grid time.
pub fn run_oracle_crosscheck(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ctx = Ctx::new(cfg)?;
    let f = &ctx.kernel;
    if f.arity() > ORACLE_MAX_ARITY {
        return Err(Error::CapExceeded {
            n: f.arity(),
            cap: ORACLE_MAX_ARITY,
        });
    }
    let terms = f
        .terms()
        .ok_or_else(|| Error::NotPolynomial("oracle cross-check needs a tensor-sum kernel".into()))?;
    if !f.is_polynomial() {
        return Err(Error::NotPolynomial("oracle cross-check needs polynomial factors".into()));
    }
    let grid = &cfg.run.t_grid;
    let opts = OracleOptions {
        rel_tol: cfg.tolerances.oracle_rel_tol,
        ..OracleOptions::default()
    };
    let mut exact = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut total = 0.0;
        for term in terms {
            total += term.coeff * exact_mixed_moment(t, &ctx.params, &term.factors, &opts)?;
        }
        exact.push(total);
    }
    let values = ctx.farm(cfg.run.replicas, |r| {
        let snaps = simulate_grid(&ctx.params, grid, ctx.key(r), &ctx.caps)?;
        let v = snaps.iter().map(|s| v_statistic(s, f)).collect::<Result<Vec<f64>>>()?;
        Ok((v, snaps.last().map_or(0, |s| s.count())))
    })?;
    let mut checks = Vec::new();
    let mut records = Vec::new();
    for (i, &t) in grid.iter().enumerate() {
        let col: Vec<f64> = values.iter().map(|(v, _)| v[i]).collect();
        let s = summarize(&col);
        checks.push(Check::within_se(&format!("v_mean@{t}"), s.mean, exact[i], s.se, cfg.tolerances.se_multiple));
        for (r, v) in col.iter().enumerate() {
            records.push(rec(r as u64, t, "v_statistic", *v));
        }
    }
    let survivors = values.iter().filter(|(_, c)| *c > 0).count();
    ctx.report(TestKind::Oracle, survivors, checks, records)
}

/// Simulates every replica on the grid; returns the snapshots and a report with
/// counts and martingale values per time.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<(TestReport, Vec<Vec<ParticleSnapshot>>)> {
    let ctx = Ctx::new(cfg)?;
    let grid = &cfg.run.t_grid;
    let snaps = ctx.farm(cfg.run.replicas, |r| simulate_grid(&ctx.params, grid, ctx.key(r), &ctx.caps))?;
    let mut records = Vec::new();
    for (r, path) in snaps.iter().enumerate() {
        let obs = TrajectoryObservables::from_snapshots(&ctx.params, path);
        for (i, &t) in obs.times.iter().enumerate() {
            records.push(rec(r as u64, t, "count", obs.counts[i] as f64));
            records.push(rec(r as u64, t, "v", obs.v_vals[i]));
        }
    }
    let survivors = snaps.iter().filter(|p| p.last().is_some_and(|s| !s.is_extinct())).count();
    let report = ctx.report_named("simulate", survivors, Vec::new(), records)?;
    Ok((report, snaps))
}

/// Degeneracy order of the kernel and the limit variance `n^2 sigma^2(Pi_1 f)`.
pub fn run_variance(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ctx = Ctx::new(cfg)?;
    let f = if ctx.kernel.is_symmetric() {
        ctx.kernel.clone()
    } else {
        ctx.kernel.symmetrized()?
    };
    let mut checks = Vec::new();
    match degeneracy_order(&f, &ctx.params, &ctx.rule, cfg.tolerances.canonical_tol)? {
        Degeneracy::Order { k, .. } => checks.push(Check::info("projection_index", k as f64)),
        Degeneracy::Constant(c) => checks.push(Check::info("constant_value", c)),
    }
    checks.push(Check::info("invariant_mean", f.invariant_mean(&ctx.params, &ctx.rule)?));
    checks.push(Check::info(
        "first_order_variance",
        first_order_variance(&f, &ctx.params, &ctx.rule, DEFAULT_TIME_NODES)?,
    ));
    ctx.report_named("variance", 0, checks, Vec::new())
}

impl Ctx<'_> {
    fn report_named(&self, name: &str, survivors: usize, checks: Vec<Check>, records: Vec<Record>) -> Result<TestReport> {
        let mut rep = self.report(TestKind::Lln, survivors, checks, records)?;
        rep.test = name.into();
        Ok(rep)
    }
}

pub fn run_test(cfg: &ExperimentConfig, kind: TestKind) -> Result<TestReport> {
    match kind {
        TestKind::Lln => run_lln(cfg),
        TestKind::Clt => run_clt(cfg),
        TestKind::Wlaw => run_w_law(cfg),
        TestKind::Oracle => run_oracle_crosscheck(cfg),
        TestKind::Martingale => run_martingale(cfg),
    }
}

/// Runs every test listed in the config, in order.
pub fn run_selected(cfg: &ExperimentConfig) -> Result<Vec<TestReport>> {
    if cfg.run.tests.is_empty() {
        return Err(Error::Config("no tests selected".into()));
    }
    cfg.run.tests.iter().map(|&k| run_test(cfg, k)).collect()
}
