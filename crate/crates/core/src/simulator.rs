//! Exact simulation of the branching OU system.
//!
//! Lineages are walked depth-first. Every particle owns a ChaCha stream keyed
//! by its genealogy (root key, then one mixing step per generation), so a
//! realization depends only on the seed and never on traversal order or on
//! which thread ran it.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ou_kernel::ou_advance;

pub const DEFAULT_MAX_PARTICLES: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    /// Largest admissible number of particles alive at any observation time.
    pub max_particles: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_particles: DEFAULT_MAX_PARTICLES,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child stream key from a parent key and an index.
pub fn mix_key(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Root stream key of replica `replica` under a global seed.
pub fn replica_key(seed: u64, replica: u64) -> u64 {
    mix_key(splitmix64(seed), replica)
}

/// Lifetime drawn by the particle owning stream `key` (its first draw).
pub fn lifetime_of(key: u64, params: &ModelParams) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    draw_lifetime(&mut rng, params.lambda)
}

fn draw_lifetime(rng: &mut ChaCha8Rng, lambda: f64) -> f64 {
    Exp::new(lambda).expect("lambda validated").sample(rng)
}

/// Positions of all particles alive at time `t`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSnapshot {
    pub t: f64,
    dim: usize,
    positions: Vec<f64>,
}

impl ParticleSnapshot {
    pub fn new(t: f64, dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 || positions.len() % dim != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates do not split into points of dimension {dim}",
                positions.len()
            )));
        }
        Ok(ParticleSnapshot { t, dim, positions })
    }

    /// Snapshot of one-dimensional points.
    pub fn from_points_1d(t: f64, xs: &[f64]) -> Self {
        ParticleSnapshot {
            t,
            dim: 1,
            positions: xs.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_extinct(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn flat(&self) -> &[f64] {
        &self.positions
    }

    /// `sum_i X_t(i)` per coordinate.
    pub fn position_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for x in self.positions() {
            for (a, b) in s.iter_mut().zip(x) {
                *a += b;
            }
        }
        s
    }
}

/// Martingale observables of one trajectory on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryObservables {
    pub times: Vec<f64>,
    pub counts: Vec<usize>,
    /// `V_t = e^{-lambda_p t} |X_t|`.
    pub v_vals: Vec<f64>,
    /// `H_t = e^{(mu - lambda_p) t} sum_i X_t(i)`, one vector per time.
    pub h_vals: Vec<Vec<f64>>,
}

impl TrajectoryObservables {
    pub fn from_snapshots(params: &ModelParams, snaps: &[ParticleSnapshot]) -> Self {
        let lp = params.lambda_p();
        let mut out = TrajectoryObservables {
            times: Vec::with_capacity(snaps.len()),
            counts: Vec::with_capacity(snaps.len()),
            v_vals: Vec::with_capacity(snaps.len()),
            h_vals: Vec::with_capacity(snaps.len()),
        };
        for s in snaps {
            out.times.push(s.t);
            out.counts.push(s.count());
            out.v_vals.push((-lp * s.t).exp() * s.count() as f64);
            let w = ((params.mu - lp) * s.t).exp();
            out.h_vals.push(s.position_sum().into_iter().map(|v| w * v).collect());
        }
        out
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::InvalidParameter("time grid is empty".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidParameter("grid times must be finite and >= 0".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("grid times must increase".into()));
    }
    Ok(())
}

/// One realization observed at every time of `t_grid`.
pub fn simulate_grid(
    params: &ModelParams,
    t_grid: &[f64],
    key: u64,
    caps: &Caps,
) -> Result<Vec<ParticleSnapshot>> {
    params.validate()?;
    check_grid(t_grid)?;
    if caps.max_particles == 0 {
        return Err(Error::InvalidParameter("particle cap must be >= 1".into()));
    }
    let dim = params.dim();
    let horizon = *t_grid.last().expect("grid checked nonempty");
    let mut records: Vec<Vec<f64>> = vec![Vec::new(); t_grid.len()];

    // pending particles: (stream key, birth time), start positions kept in a parallel flat stack
    let mut stack: Vec<(u64, f64)> = vec![(key, 0.0)];
    let mut starts: Vec<f64> = params.x0.clone();
    let mut pos = vec![0.0; dim];

    while let Some((k, birth)) = stack.pop() {
        let top = starts.len() - dim;
        pos.copy_from_slice(&starts[top..]);
        starts.truncate(top);

        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let death = birth + draw_lifetime(&mut rng, params.lambda);
        // drawn before any motion so the genealogy does not depend on the grid
        let splits = rng.random::<f64>() < params.p;
        let mut now = birth;

        let first = t_grid.partition_point(|&g| g < birth);
        for (gi, &g) in t_grid.iter().enumerate().skip(first) {
            if g >= death {
                break;
            }
            ou_advance(&mut pos, g - now, params, &mut rng);
            now = g;
            let rec = &mut records[gi];
            rec.extend_from_slice(&pos);
            if rec.len() / dim > caps.max_particles {
                return Err(Error::ParticleCap {
                    cap: caps.max_particles,
                    time: g,
                });
            }
        }

        if splits && death <= horizon {
            ou_advance(&mut pos, death - now, params, &mut rng);
            for child in 0..2u64 {
                stack.push((mix_key(k, child), death));
                starts.extend_from_slice(&pos);
            }
        }
    }

    t_grid
        .iter()
        .zip(records)
        .map(|(&t, positions)| ParticleSnapshot::new(t, dim, positions))
        .collect()
}

/// Snapshot of one realization at `t_end`.
pub fn simulate(params: &ModelParams, t_end: f64, key: u64, caps: &Caps) -> Result<ParticleSnapshot> {
    let mut snaps = simulate_grid(params, &[t_end], key, caps)?;
    Ok(snaps.pop().expect("one grid time"))
}

pub fn observe_path(
    params: &ModelParams,
    t_grid: &[f64],
    key: u64,
    caps: &Caps,
) -> Result<TrajectoryObservables> {
    let snaps = simulate_grid(params, t_grid, key, caps)?;
    Ok(TrajectoryObservables::from_snapshots(params, &snaps))
}

/// Keeps the non-extinct snapshots and returns them with the survival fraction.
pub fn condition_on_survival(
    replicas: Vec<ParticleSnapshot>,
) -> Result<(Vec<ParticleSnapshot>, f64)> {
    let total = replicas.len();
    let alive: Vec<_> = replicas.into_iter().filter(|s| !s.is_extinct()).collect();
    if alive.is_empty() {
        return Err(Error::AllExtinct { replicas: total });
    }
    let frac = alive.len() as f64 / total as f64;
    Ok((alive, frac))
}

/// Writes one CSV row `replica_id,t,coord_1..coord_d` per particle.
pub fn dump_snapshots_csv<W: Write>(
    out: W,
    rows: &[(u64, &ParticleSnapshot)],
    dim: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["replica_id".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|i| format!("coord_{i}")));
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for (id, snap) in rows {
        for x in snap.positions() {
            let mut rec = vec![id.to_string(), snap.t.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
