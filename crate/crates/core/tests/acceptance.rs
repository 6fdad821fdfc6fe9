//! End-to-end acceptance checks. Every criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::io::Write;

use oubranch::harness::stats::{correlation, ks_one_sample, ks_two_sample, summarize};
use oubranch::kernels::{test_points, HoeffdingTable, Kernel, TensorTerm};
use oubranch::limits::{first_order_variance, SlowLimit, DEFAULT_TIME_NODES};
use oubranch::ou_kernel::{
    evolve, invariant_integral, ou_transition_sample, Func1D, QuadratureRule, SeparableFn, DEFAULT_SPACE_NODES,
};
use oubranch::simulator::{replica_key, simulate, simulate_grid, Caps, ParticleSnapshot};
use oubranch::tree_oracle::{exact_mixed_moment, OracleOptions};
use oubranch::ustats::{u_statistic, v_statistic, Strategy};
use oubranch::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Exp, Normal};

const KS_LEVEL: f64 = 0.01;

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) {
    // written past the test harness capture so the lines always reach the log
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] criterion {:>2} {tag}: {}", o.id, o.detail);
}

fn params(mu: f64) -> ModelParams {
    ModelParams::one_dim(1.0, 0.75, mu, 1.0).unwrap()
}

fn x() -> SeparableFn {
    SeparableFn::scalar(Func1D::identity())
}

fn one() -> SeparableFn {
    SeparableFn::scalar(Func1D::one())
}

fn power_sum(s: &ParticleSnapshot, f: &Func1D) -> f64 {
    s.flat().iter().map(|&v| f.eval(v)).sum()
}

fn survivors_at(pr: &ModelParams, t: f64, replicas: u64, seed: u64) -> Vec<ParticleSnapshot> {
    (0..replicas)
        .map(|r| simulate(pr, t, replica_key(seed, r), &Caps::default()).unwrap())
        .filter(|s| !s.is_extinct())
        .collect()
}

fn within(value: f64, target: f64, se: f64, k: f64) -> bool {
    (value - target).abs() <= k * se
}

fn criterion_1() -> Outcome {
    let pr = params(1.0);
    let d = pr.derive().unwrap();
    let n = 20_000u64;
    let paths: Vec<Vec<ParticleSnapshot>> = (0..n)
        .map(|r| simulate_grid(&pr, &[8.0, 12.0], replica_key(101, r), &Caps::default()).unwrap())
        .collect();
    let extinct = paths.iter().filter(|p| p[0].is_extinct()).count() as f64 / n as f64;
    let lp = pr.lambda_p();
    let w: Vec<f64> = paths
        .iter()
        .filter(|p| !p[1].is_extinct())
        .map(|p| (-lp * 12.0).exp() * p[1].count() as f64)
        .collect();
    let law = Exp::new(d.w_rate).unwrap();
    let ks = ks_one_sample(&w, |v| law.cdf(v));
    let ext_ok = (extinct - 1.0 / 3.0).abs() <= 0.02;
    Outcome {
        id: 1,
        pass: ext_ok && ks.passes(KS_LEVEL),
        detail: format!(
            "extinction@8 {extinct:.4} (1/3 +- 0.02); W KS D={:.4} crit={:.4} p={:.3} over {} survivors",
            ks.statistic,
            ks.critical_value(KS_LEVEL),
            ks.p_value(),
            w.len()
        ),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let deg = rng.random_range(0..=6);
        let c: Vec<f64> = (0..=deg).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = Func1D::poly(c);
        let pr = ModelParams::one_dim(1.0, 0.75, rng.random_range(0.2..2.0), rng.random_range(0.3..1.5)).unwrap();
        let rule = QuadratureRule::invariant(&pr, DEFAULT_SPACE_NODES);
        let (s, t) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let two = evolve(&evolve(&f, s, &pr).unwrap(), t, &pr).unwrap();
        let once = evolve(&f, s + t, &pr).unwrap();
        for &x0 in &[-2.0, -0.3, 0.0, 1.1, 2.5] {
            let (a, b) = (two.eval(x0), once.eval(x0));
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
        let m0 = invariant_integral(&f, &pr, &rule).unwrap();
        let mt = invariant_integral(&once, &pr, &rule).unwrap();
        worst = worst.max((m0 - mt).abs() / m0.abs().max(1.0));
    }
    let identities_ok = worst <= 1e-10;

    let pr = ModelParams::one_dim(1.0, 0.75, 0.6, 1.4).unwrap();
    let n = 100_000;
    let mut sampler_ok = true;
    let mut notes = Vec::new();
    for &(x0, t) in &[(1.5, 0.8), (-0.7, 2.0)] {
        let draws: Vec<f64> = (0..n).map(|_| ou_transition_sample(&[x0], t, &pr, &mut rng)[0]).collect();
        let mean = x0 * (-pr.mu * t).exp();
        let var = pr.stat_var() * (1.0 - (-2.0 * pr.mu * t).exp());
        let s = summarize(&draws);
        let m_ok = within(s.mean, mean, s.se, 4.0);
        let v_ok = within(s.var, var, s.var_se, 4.0);
        sampler_ok &= m_ok && v_ok;
        notes.push(format!("mean {:.4}/{mean:.4} var {:.4}/{var:.4}", s.mean, s.var));
    }
    Outcome {
        id: 2,
        pass: identities_ok && sampler_ok,
        detail: format!("max identity error {worst:.2e} (<= 1e-10); sampler {}", notes.join(", ")),
    }
}

fn random_kernel(rng: &mut ChaCha8Rng, arity: usize, integer: bool) -> Kernel {
    let terms = (0..rng.random_range(1..=3))
        .map(|_| TensorTerm {
            coeff: 1.0,
            factors: (0..arity)
                .map(|_| {
                    let deg = rng.random_range(0..=2);
                    let c: Vec<f64> = (0..=deg)
                        .map(|_| {
                            if integer {
                                rng.random_range(-3i32..=3) as f64
                            } else {
                                rng.random_range(-2.0..2.0)
                            }
                        })
                        .collect();
                    SeparableFn::scalar(Func1D::poly(c))
                })
                .collect(),
        })
        .collect();
    Kernel::tensor_sum(arity, 1, terms, false).unwrap()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mismatches = 0;
    let mut snapshots = 0;
    for _ in 0..50 {
        let arity = rng.random_range(1..=4);
        let f = random_kernel(&mut rng, arity, true);
        for count in 0..=12 {
            let pts: Vec<f64> = (0..count).map(|_| rng.random_range(-4i32..=4) as f64).collect();
            let s = ParticleSnapshot::from_points_1d(1.0, &pts);
            let a = u_statistic(&s, &f, Strategy::Naive).unwrap();
            let b = u_statistic(&s, &f, Strategy::InclusionExclusion).unwrap();
            snapshots += 1;
            if a != b {
                mismatches += 1;
            }
        }
    }
    let pr = ModelParams::one_dim(1.0, 0.75, 0.7, 1.3).unwrap();
    let rule = QuadratureRule::invariant(&pr, DEFAULT_SPACE_NODES);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let arity = rng.random_range(1..=4);
        let f = random_kernel(&mut rng, arity, false);
        let table = HoeffdingTable::build(&f, &pr, &rule).unwrap();
        for p in test_points(arity, &pr, 12) {
            let (a, b) = (f.eval(&p), table.reconstruct(&p, 1));
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    Outcome {
        id: 3,
        pass: mismatches == 0 && worst <= 1e-8,
        detail: format!(
            "{mismatches} Naive/IE mismatches over {snapshots} snapshots; Hoeffding reconstruction error {worst:.2e} (<= 1e-8)"
        ),
    }
}

fn criterion_4() -> Outcome {
    let yule = ModelParams::one_dim(1.0, 1.0, 1.0, 1.0).unwrap();
    let ones = vec![one(); 2];
    let mut yule_err = 0.0f64;
    for &t in &[0.5, 1.0, 2.0] {
        let v = exact_mixed_moment(t, &yule, &ones, &OracleOptions::default()).unwrap();
        let exact = 2.0 * (2.0 * t).exp() - t.exp();
        yule_err = yule_err.max(((v - exact) / exact).abs());
    }

    let sq = || SeparableFn::scalar(Func1D::monomial(2));
    let matrix: Vec<(&str, Vec<SeparableFn>)> = vec![
        ("x", vec![x()]),
        ("x^2", vec![sq()]),
        ("x.x", vec![x(), x()]),
        ("1.x^2", vec![one(), sq()]),
        ("x.x^2", vec![x(), sq()]),
        ("x.x.x", vec![x(), x(), x()]),
        ("1.1.x", vec![one(), one(), x()]),
    ];
    let (t, n) = (3.0, 20_000u64);
    let mut worst_z = 0.0f64;
    let mut pass = yule_err <= 1e-5;
    for (mu, regime) in [(1.0, "slow"), (0.25, "critical"), (0.1, "fast")] {
        let pr = params(mu).with_start(vec![0.5]).unwrap();
        let snaps: Vec<ParticleSnapshot> =
            (0..n).map(|r| simulate(&pr, t, replica_key(404, r), &Caps::default()).unwrap()).collect();
        for (name, fs) in &matrix {
            let exact = exact_mixed_moment(t, &pr, fs, &OracleOptions::default()).unwrap();
            let vals: Vec<f64> = snaps
                .iter()
                .map(|s| {
                    fs.iter()
                        .map(|f| s.positions().map(|p| f.eval(p)).sum::<f64>())
                        .product()
                })
                .collect();
            let s = summarize(&vals);
            let z = (s.mean - exact).abs() / s.se;
            if z > 4.0 {
                pass = false;
                let _ = writeln!(
                    std::io::stderr(),
                    "[acceptance]   oracle mismatch {regime} {name}: mc {:.5} +- {:.5} vs {exact:.5}",
                    s.mean,
                    s.se
                );
            }
            worst_z = worst_z.max(z);
        }
    }
    Outcome {
        id: 4,
        pass,
        detail: format!(
            "Yule rel error {yule_err:.2e} (<= 1e-5); worst MC deviation {worst_z:.2} SE over {} entries x 3 regimes (<= 4)",
            matrix.len()
        ),
    }
}

/// The shared Slow-regime sample used by criteria 5, 7 and 9.
fn slow_survivors() -> Vec<ParticleSnapshot> {
    survivors_at(&params(1.0), 10.0, 10_000, 505)
}

fn criterion_5(snaps: &[ParticleSnapshot]) -> Outcome {
    let id = Func1D::identity();
    let z: Vec<f64> = snaps.iter().map(|s| power_sum(s, &id) / (s.count() as f64).sqrt()).collect();
    let s = summarize(&z);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let ks = ks_one_sample(&z, |v| std_normal.cdf(v));
    let var_ok = within(s.var, 1.0, s.var_se, 3.0);
    Outcome {
        id: 5,
        pass: var_ok && ks.passes(KS_LEVEL),
        detail: format!(
            "var {:.4} +- {:.4} vs 1.0 (3 SE); KS D={:.4} crit={:.4} p={:.3}, {} survivors",
            s.var,
            s.var_se,
            ks.statistic,
            ks.critical_value(KS_LEVEL),
            ks.p_value(),
            z.len()
        ),
    }
}

fn criterion_6() -> Outcome {
    let t = 20.0;
    let snaps = survivors_at(&params(0.25), t, 10_000, 606);
    let id = Func1D::identity();
    let z: Vec<f64> = snaps
        .iter()
        .map(|s| power_sum(s, &id) / (t * s.count() as f64).sqrt())
        .collect();
    let s = summarize(&z);
    Outcome {
        id: 6,
        pass: within(s.var, 3.0, s.var_se, 3.0),
        detail: format!("var {:.4} +- {:.4} vs 3.0 (3 SE), {} survivors", s.var, s.var_se, z.len()),
    }
}

fn criterion_7(snaps: &[ParticleSnapshot]) -> Outcome {
    let pr = params(1.0);
    let rule = QuadratureRule::invariant(&pr, DEFAULT_SPACE_NODES);
    let f = Kernel::power(x(), 2);
    let take = 5000.min(snaps.len());
    let mc: Vec<f64> = snaps[..take]
        .iter()
        .map(|s| u_statistic(s, &f, Strategy::InclusionExclusion).unwrap() / s.count() as f64)
        .collect();
    let limit = SlowLimit::new(&f, &pr, &rule, DEFAULT_TIME_NODES).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let draws: Vec<f64> = (0..5000).map(|_| limit.sample(&mut rng)).collect();
    let ks = ks_two_sample(&mc, &draws);
    let (a, b) = (summarize(&mc), summarize(&draws));
    let se = (a.se * a.se + b.se * b.se).sqrt();
    let mean_ok = within(a.mean, b.mean, se, 4.0);
    Outcome {
        id: 7,
        pass: take == 5000 && mean_ok && ks.passes(KS_LEVEL),
        detail: format!(
            "two-sample KS D={:.4} crit={:.4} p={:.2e}; means {:.4} vs {:.4} (4 SE = {:.4}), {take} survivors",
            ks.statistic,
            ks.critical_value(KS_LEVEL),
            ks.p_value(),
            a.mean,
            b.mean,
            4.0 * se
        ),
    }
}

fn criterion_8() -> Outcome {
    let pr = params(0.1);
    let t = 14.0;
    let lp = pr.lambda_p();
    let snaps = survivors_at(&pr, t, 2000, 808);
    let f = Kernel::power(x(), 2);
    let id = Func1D::identity();
    let scale = (-2.0 * (lp - pr.mu) * t).exp();
    let u: Vec<f64> = snaps
        .iter()
        .map(|s| scale * u_statistic(s, &f, Strategy::InclusionExclusion).unwrap())
        .collect();
    let h2: Vec<f64> = snaps
        .iter()
        .map(|s| (((pr.mu - lp) * t).exp() * power_sum(s, &id)).powi(2))
        .collect();
    let r = correlation(&u, &h2);
    Outcome {
        id: 8,
        pass: r > 0.95,
        detail: format!("corr {r:.5} (> 0.95), {} survivors", u.len()),
    }
}

fn criterion_9(snaps: &[ParticleSnapshot]) -> Outcome {
    let pr = params(1.0);
    let rule = QuadratureRule::invariant(&pr, DEFAULT_SPACE_NODES);
    let f = Kernel::tensor_sum(
        2,
        1,
        vec![
            TensorTerm { coeff: 1.0, factors: vec![x(), one()] },
            TensorTerm { coeff: 1.0, factors: vec![one(), x()] },
        ],
        true,
    )
    .unwrap();
    let target = first_order_variance(&f, &pr, &rule, DEFAULT_TIME_NODES).unwrap();
    let z: Vec<f64> = snaps
        .iter()
        .map(|s| u_statistic(s, &f, Strategy::InclusionExclusion).unwrap() * (s.count() as f64).powf(-1.5))
        .collect();
    let s = summarize(&z);
    let rel = (s.var - target).abs() / target;
    Outcome {
        id: 9,
        pass: rel <= 0.10,
        detail: format!("var {:.4} vs {target:.4}, relative gap {rel:.4} (<= 0.10)", s.var),
    }
}

/// Second moment of the regime-normalized V-statistic of `x (x) x` on a time grid,
/// paired over the replicas that survive to the last time.
fn criterion_10() -> Outcome {
    let grid = [6.0, 8.0, 10.0, 12.0];
    let f = Kernel::power(x(), 2);
    let mut pass = true;
    let mut notes = Vec::new();
    for (mu, regime) in [(1.0, "slow"), (0.25, "critical"), (0.1, "fast")] {
        let pr = params(mu);
        let lp = pr.lambda_p();
        let norm = |s: &ParticleSnapshot| -> f64 {
            let m = s.count() as f64;
            match regime {
                "slow" => 1.0 / m,
                "critical" => 1.0 / (s.t * m),
                _ => (-2.0 * (lp - pr.mu) * s.t).exp(),
            }
        };
        let rows: Vec<Vec<f64>> = (0..10_000u64)
            .map(|r| simulate_grid(&pr, &grid, replica_key(1010, r), &Caps::default()).unwrap())
            .filter(|snaps| !snaps.last().unwrap().is_extinct())
            .map(|snaps| {
                snaps
                    .iter()
                    .map(|s| (norm(s) * v_statistic(s, &f).unwrap()).powi(2))
                    .collect()
            })
            .collect();
        let means: Vec<f64> = (0..grid.len())
            .map(|i| summarize(&rows.iter().map(|r| r[i]).collect::<Vec<_>>()).mean)
            .collect();
        let diffs: Vec<f64> = rows.iter().map(|r| r[grid.len() - 1] - r[0]).collect();
        let d = summarize(&diffs);
        let up = means.windows(2).all(|w| w[1] > w[0]);
        let down = means.windows(2).all(|w| w[1] < w[0]);
        let trend = (up || down) && d.mean.abs() > 2.0 * d.se;
        pass &= !trend;
        notes.push(format!(
            "{regime} [{}] diff {:.3} +- {:.3}{}",
            means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(", "),
            d.mean,
            d.se,
            if trend { " TREND" } else { "" }
        ));
    }
    Outcome { id: 10, pass, detail: notes.join("; ") }
}

#[test]
fn acceptance() {
    let slow = slow_survivors();
    let outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(&slow),
        criterion_6(),
        criterion_7(&slow),
        criterion_8(),
        criterion_9(&slow),
        criterion_10(),
    ];
    for o in &outcomes {
        line(o);
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    let _ = writeln!(
        std::io::stderr(),
        "[acceptance] {} of {} criteria pass",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
