use oubranch::harness::stats::{ks_one_sample, summarize};
use oubranch::simulator::{lifetime_of, observe_path, replica_key, simulate, Caps};
use oubranch::ModelParams;
use statrs::distribution::{ContinuousCDF, Exp, Normal};

fn params(mu: f64) -> ModelParams {
    ModelParams::one_dim(1.0, 0.75, mu, 1.0).unwrap()
}

#[test]
fn lifetimes_are_exponential() {
    let pr = ModelParams::one_dim(2.5, 0.75, 1.0, 1.0).unwrap();
    let draws: Vec<f64> = (0..5000).map(|k| lifetime_of(replica_key(3, k), &pr)).collect();
    let law = Exp::new(2.5).unwrap();
    assert!(ks_one_sample(&draws, |x| law.cdf(x)).passes(0.01));
}

#[test]
fn extinction_and_mean_population() {
    let pr = params(1.0);
    let d = pr.derive().unwrap();
    let t = 3.0;
    let n = 8000;
    let counts: Vec<f64> = (0..n)
        .map(|r| simulate(&pr, t, replica_key(11, r), &Caps::default()).unwrap().count() as f64)
        .collect();
    let s = summarize(&counts);
    assert!((s.mean - d.mean_population(t)).abs() < 4.0 * s.se, "{} vs {}", s.mean, d.mean_population(t));
    let q = d.extinction_by(t);
    let frac = counts.iter().filter(|&&c| c == 0.0).count() as f64 / n as f64;
    assert!((frac - q).abs() < 4.0 * (q * (1.0 - q) / n as f64).sqrt(), "{frac} vs {q}");
}

#[test]
fn martingales_have_constant_mean() {
    let pr = params(0.4).with_start(vec![1.0]).unwrap();
    let grid = [0.5, 1.5, 3.0];
    let paths: Vec<_> = (0..6000)
        .map(|r| observe_path(&pr, &grid, replica_key(5, r), &Caps::default()).unwrap())
        .collect();
    for i in 0..grid.len() {
        let v: Vec<f64> = paths.iter().map(|p| p.v_vals[i]).collect();
        let h: Vec<f64> = paths.iter().map(|p| p.h_vals[i][0]).collect();
        let (sv, sh) = (summarize(&v), summarize(&h));
        assert!((sv.mean - 1.0).abs() < 4.0 * sv.se);
        assert!((sh.mean - 1.0).abs() < 4.0 * sh.se);
    }
}

#[test]
fn a_particle_position_has_the_ou_marginal() {
    // the genealogy is drawn independently of the motion, so the first particle
    // in traversal order is an OU path of length t
    let pr = params(0.8).with_start(vec![2.0]).unwrap();
    let t = 1.7;
    let xs: Vec<f64> = (0..6000)
        .filter_map(|r| {
            let s = simulate(&pr, t, replica_key(21, r), &Caps::default()).unwrap();
            (!s.is_extinct()).then(|| s.position(0)[0])
        })
        .collect();
    let mean = 2.0 * (-pr.mu * t).exp();
    let sd = (pr.stat_var() * (1.0 - (-2.0 * pr.mu * t).exp())).sqrt();
    let law = Normal::new(mean, sd).unwrap();
    assert!(ks_one_sample(&xs, |x| law.cdf(x)).passes(0.01));
}

#[test]
fn particle_cap_is_reported() {
    let pr = params(1.0);
    let caps = Caps { max_particles: 50 };
    let mut hit = false;
    for r in 0..50 {
        if let Err(e) = simulate(&pr, 12.0, replica_key(1, r), &caps) {
            assert!(matches!(e, oubranch::Error::ParticleCap { cap: 50, .. }));
            hit = true;
        }
    }
    assert!(hit);
}
