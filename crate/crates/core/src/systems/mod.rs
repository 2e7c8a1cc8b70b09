//! Snapshot generators for the Duffing oscillator, the circle rotation and
//! the Kuramoto-Sivashinsky equation.

pub mod duffing;
pub mod kse;
pub mod modulo;

use std::f64::consts::TAU;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use duffing::DuffingSpec;
pub use kse::{KseSolver, KseSpec};
pub use modulo::{modulo_step, modulo_true_eigenvalues, ModuloSpec};

use crate::error::{Error, Result};
use crate::kernel::map_rows;
use crate::koopman::SnapshotSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Duffing(DuffingSpec),
    Modulo(ModuloSpec),
    Kse(KseSpec),
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SystemSpec::Duffing(s) => s.validate(),
            SystemSpec::Modulo(s) => s.validate(),
            SystemSpec::Kse(s) => s.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::Duffing(_) => "duffing",
            SystemSpec::Modulo(_) => "modulo",
            SystemSpec::Kse(_) => "kse",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::Duffing(_) => 2,
            SystemSpec::Modulo(_) => 1,
            SystemSpec::Kse(s) => s.grid_points,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            SystemSpec::Duffing(s) => s.dt,
            SystemSpec::Modulo(_) => 1.0,
            SystemSpec::Kse(s) => s.dt,
        }
    }

    /// Draws the initial condition of trajectory `ic` from its own stream.
    pub fn sample_ic(&self, seed: u64, ic: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ic as u64);
        match self {
            SystemSpec::Duffing(s) => (0..2).map(|_| rng.random_range(s.ic_low..s.ic_high)).collect(),
            SystemSpec::Modulo(_) => vec![rng.random_range(0.0..TAU)],
            SystemSpec::Kse(s) => {
                let t1 = s.tau1[0] + (s.tau1[1] - s.tau1[0]) * rng.random::<f64>();
                let t2 = s.tau2[0] + (s.tau2[1] - s.tau2[0]) * rng.random::<f64>();
                s.initial_condition(t1, t2)
            }
        }
    }

    /// `steps + 1` states from `x0`.
    pub fn simulate(&self, x0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
        if x0.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x0.len(),
            });
        }
        match self {
            SystemSpec::Duffing(s) => Ok(s
                .trajectory([x0[0], x0[1]], steps)?
                .into_iter()
                .map(|x| x.to_vec())
                .collect()),
            SystemSpec::Modulo(s) => {
                let mut out = Vec::with_capacity(steps + 1);
                let mut x = x0[0];
                out.push(vec![x]);
                for _ in 0..steps {
                    x = modulo_step(s.omega, x);
                    out.push(vec![x]);
                }
                Ok(out)
            }
            SystemSpec::Kse(s) => KseSolver::new(s)?.solve(x0, steps),
        }
    }
}

/// Simulated trajectories, one per initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub dim: usize,
    pub dt: f64,
    /// `trajectories[i][t]` is the state of trajectory `i` at step `t`.
    pub trajectories: Vec<Vec<Vec<f64>>>,
}

/// One snapshot pair and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub trajectory: usize,
    pub step: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TrajectoryBundle {
    pub fn n_ic(&self) -> usize {
        self.trajectories.len()
    }

    pub fn steps(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len().saturating_sub(1))
    }

    pub fn initial_conditions(&self) -> Mat<f64> {
        Mat::from_fn(self.n_ic(), self.dim, |i, j| self.trajectories[i][0][j])
    }

    /// Consecutive pairs `(x_t, x_{t+1})` for `t = 0, stride, 2 stride, ...`.
    pub fn pairs(&self, stride: usize) -> Vec<PairRecord> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        for (i, tr) in self.trajectories.iter().enumerate() {
            for t in (0..tr.len().saturating_sub(1)).step_by(stride) {
                out.push(PairRecord {
                    trajectory: i,
                    step: t,
                    x: tr[t].clone(),
                    y: tr[t + 1].clone(),
                });
            }
        }
        out
    }

    pub fn to_snapshots(&self, stride: usize) -> Result<SnapshotSet> {
        let pairs = self.pairs(stride);
        if pairs.is_empty() {
            return Ok(SnapshotSet::empty(self.dim));
        }
        let xs: Vec<Vec<f64>> = pairs.iter().map(|p| p.x.clone()).collect();
        let ys: Vec<Vec<f64>> = pairs.iter().map(|p| p.y.clone()).collect();
        SnapshotSet::from_rows(&xs, &ys)
    }
}

/// Simulates `n_ic` trajectories of `steps` steps each, deterministically per seed.
pub fn generate_dataset(spec: &SystemSpec, n_ic: usize, steps: usize, seed: u64) -> Result<TrajectoryBundle> {
    spec.validate()?;
    let solver = match spec {
        SystemSpec::Kse(s) => Some(KseSolver::new(s)?),
        _ => None,
    };
    let trajectories = map_rows(n_ic, |i| {
        let x0 = spec.sample_ic(seed, i);
        match &solver {
            Some(k) => k.solve(&x0, steps),
            None => spec.simulate(&x0, steps),
        }
    })?;
    Ok(TrajectoryBundle {
        dim: spec.dim(),
        dt: spec.dt(),
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_sizes() {
        let d = generate_dataset(&SystemSpec::Duffing(DuffingSpec::default()), 100, 10, 0).unwrap();
        assert_eq!(d.to_snapshots(1).unwrap().len(), 1000);
        assert_eq!(d.to_snapshots(2).unwrap().len(), 500);
        let m = generate_dataset(&SystemSpec::Modulo(ModuloSpec::default()), 100, 50, 0).unwrap();
        assert_eq!(m.to_snapshots(1).unwrap().len(), 5000);
        let e = generate_dataset(&SystemSpec::Modulo(ModuloSpec::default()), 0, 50, 0).unwrap();
        assert_eq!(e.n_ic(), 0);
        assert!(e.to_snapshots(1).unwrap().is_empty());
    }

    #[test]
    fn pairs_are_aligned_with_the_simulator() {
        let spec = SystemSpec::Duffing(DuffingSpec::default());
        let d = generate_dataset(&spec, 5, 10, 3).unwrap();
        for p in d.pairs(1) {
            let y = spec.simulate(&p.x, 1).unwrap();
            assert!(y[1].iter().zip(&p.y).all(|(a, b)| (a - b).abs() <= 1e-9));
        }
        let spec = SystemSpec::Modulo(ModuloSpec::default());
        let d = generate_dataset(&spec, 5, 20, 3).unwrap();
        for p in d.pairs(1) {
            assert!((modulo_step(1.1 * std::f64::consts::PI, p.x[0]) - p.y[0]).abs() <= 1e-12);
            assert!((0.0..TAU).contains(&p.y[0]));
        }
    }

    #[test]
    fn ic_streams_are_independent_of_count() {
        let spec = SystemSpec::Duffing(DuffingSpec::default());
        let a = generate_dataset(&spec, 3, 4, 11).unwrap();
        let b = generate_dataset(&spec, 7, 4, 11).unwrap();
        assert_eq!(a.trajectories[..], b.trajectories[..3]);
        assert_ne!(a, generate_dataset(&spec, 3, 4, 12).unwrap());
        for tr in &b.trajectories {
            assert!(tr[0].iter().all(|v| (-2.0..2.0).contains(v)));
        }
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = SystemSpec::Kse(KseSpec::default());
        let text = toml::to_string(&spec).unwrap();
        assert!(text.contains("kind = \"kse\""));
        let back: SystemSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
