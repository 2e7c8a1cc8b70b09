//! Kuramoto-Sivashinsky `u_t + 4 u_xxxx + gamma (u_xx + u u_x) = 0` on a
//! periodic grid over `[0, 2 pi)`, pseudo-spectral in space and ETDRK4 in time.

use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contour points for the ETDRK4 coefficient means.
const CONTOUR_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KseSpec {
    pub gamma: f64,
    pub grid_points: usize,
    /// Snapshot interval.
    pub dt: f64,
    /// ETDRK4 steps per snapshot interval.
    pub substeps: usize,
    /// ETDRK4 steps in the first interval, where the rough initial field decays fast.
    pub initial_substeps: usize,
    /// Initial conditions `tau1 sin(2 pi x) + tau2 exp(cos(2 pi x))`, uniform in these ranges.
    pub tau1: [f64; 2],
    pub tau2: [f64; 2],
}

impl Default for KseSpec {
    fn default() -> Self {
        KseSpec {
            gamma: 16.0,
            grid_points: 50,
            dt: 0.005,
            substeps: 32,
            initial_substeps: 1024,
            tau1: [0.8, 1.0],
            tau2: [0.5, 1.0],
        }
    }
}

impl KseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 8 || !self.grid_points.is_multiple_of(2) {
            return Err(Error::config("system.grid_points", "must be even and at least 8"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("system.dt", "must be positive"));
        }
        if self.substeps == 0 || self.initial_substeps == 0 {
            return Err(Error::config("system.substeps", "must be positive"));
        }
        if !self.gamma.is_finite() {
            return Err(Error::config("system.gamma", "must be finite"));
        }
        for (name, r) in [("system.tau1", self.tau1), ("system.tau2", self.tau2)] {
            if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) {
                return Err(Error::config(name, "range must be ordered and finite"));
            }
        }
        Ok(())
    }

    /// `x_k = 2 pi k / n`, right endpoint excluded.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_points;
        (0..n).map(|k| TAU * k as f64 / n as f64).collect()
    }

    pub fn initial_condition(&self, tau1: f64, tau2: f64) -> Vec<f64> {
        self.grid()
            .iter()
            .map(|&x| tau1 * (TAU * x).sin() + tau2 * (TAU * x).cos().exp())
            .collect()
    }
}

/// ETDRK4 coefficients for one step size.
struct Etd {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    steps: usize,
}

impl Etd {
    fn new(spec: &KseSpec, steps: usize) -> Self {
        let n = spec.grid_points;
        let h = spec.dt / steps as f64;
        let (mut e, mut e2, mut q, mut f1, mut f2, mut f3) = (
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
        );
        for j in 0..n {
            let kf = wavenumber(j, n) as f64;
            let l = -4.0 * kf.powi(4) + spec.gamma * kf * kf;
            let hl = h * l;
            e[j] = hl.exp();
            e2[j] = (hl / 2.0).exp();
            // contour means avoid the cancellation in the phi-function formulas
            let (mut sq, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
            for m in 0..CONTOUR_POINTS {
                let th = TAU * (m as f64 + 0.5) / CONTOUR_POINTS as f64;
                let z = Complex64::new(hl + th.cos(), th.sin());
                let ez = z.exp();
                let z3 = z * z * z;
                sq += (((z / 2.0).exp() - 1.0) / z).re;
                s1 += ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3).re;
                s2 += ((2.0 + z + ez * (z - 2.0)) / z3).re;
                s3 += ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3).re;
            }
            let mm = CONTOUR_POINTS as f64;
            q[j] = h * sq / mm;
            f1[j] = h * s1 / mm;
            f2[j] = h * s2 / mm;
            f3[j] = h * s3 / mm;
        }
        Etd {
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            steps,
        }
    }
}

/// Precomputed transforms and ETDRK4 coefficients for one spec.
pub struct KseSolver {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `-(gamma / 2) i k`, zero outside the dealiased band and at Nyquist.
    nl: Vec<Complex64>,
    first: Etd,
    rest: Etd,
}

impl std::fmt::Debug for KseSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KseSolver")
            .field("n", &self.n)
            .field("substeps", &self.rest.steps)
            .finish()
    }
}

/// Signed integer wavenumber of FFT bin `j`.
fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

impl KseSolver {
    pub fn new(spec: &KseSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.grid_points;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let cutoff = n as i64 / 3;
        let nl = (0..n)
            .map(|j| {
                let k = wavenumber(j, n);
                if k.abs() <= cutoff && j != n / 2 {
                    Complex64::new(0.0, -0.5 * spec.gamma * k as f64)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Ok(KseSolver {
            n,
            fwd,
            inv,
            nl,
            first: Etd::new(spec, spec.initial_substeps),
            rest: Etd::new(spec, spec.substeps),
        })
    }

    fn to_physical(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut buf = v.to_vec();
        self.inv.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|c| *c *= s);
        buf
    }

    /// Dealiased `-(gamma / 2) (u^2)_x` in Fourier space.
    fn nonlinear(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut u2: Vec<Complex64> = self
            .to_physical(v)
            .iter()
            .map(|c| Complex64::new(c.re * c.re, 0.0))
            .collect();
        self.fwd.process(&mut u2);
        u2.iter().zip(&self.nl).map(|(a, b)| a * b).collect()
    }

    fn etdrk4(&self, c: &Etd, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let nv = self.nonlinear(v);
        let a: Vec<Complex64> = (0..n).map(|j| c.e2[j] * v[j] + c.q[j] * nv[j]).collect();
        let na = self.nonlinear(&a);
        let b: Vec<Complex64> = (0..n).map(|j| c.e2[j] * v[j] + c.q[j] * na[j]).collect();
        let nb = self.nonlinear(&b);
        let cc: Vec<Complex64> = (0..n)
            .map(|j| c.e2[j] * a[j] + c.q[j] * (2.0 * nb[j] - nv[j]))
            .collect();
        let nc = self.nonlinear(&cc);
        (0..n)
            .map(|j| c.e[j] * v[j] + nv[j] * c.f1[j] + 2.0 * (na[j] + nb[j]) * c.f2[j] + nc[j] * c.f3[j])
            .collect()
    }

    /// `steps + 1` snapshots of the field starting at `u0`.
    pub fn solve(&self, u0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
        if u0.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: u0.len(),
            });
        }
        let mut v: Vec<Complex64> = u0.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut v);
        let mut out = Vec::with_capacity(steps + 1);
        out.push(u0.to_vec());
        for t in 1..=steps {
            let c = if t == 1 { &self.first } else { &self.rest };
            for _ in 0..c.steps {
                v = self.etdrk4(c, &v);
            }
            let u = self.to_physical(&v);
            let scale = u.iter().fold(1.0f64, |m, c| m.max(c.re.abs()));
            if u.iter().any(|c| !c.re.is_finite() || c.im.abs() > 1e-10 * scale) {
                return Err(Error::NonFinite {
                    context: "KSE field (blow-up)",
                    index: t,
                });
            }
            out.push(u.iter().map(|c| c.re).collect());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_and_constant_fields_are_equilibria() {
        let s = KseSpec::default();
        let solver = KseSolver::new(&s).unwrap();
        let zero = solver.solve(&vec![0.0; 50], 10).unwrap();
        assert!(zero.iter().flatten().all(|&v| v == 0.0));
        let c = solver.solve(&vec![0.7; 50], 10).unwrap();
        assert!(c.iter().all(|u| max_diff(u, &[0.7; 50]) < 1e-12));
    }

    #[test]
    fn halving_the_step_changes_little() {
        let s = KseSpec::default();
        let fine = KseSpec {
            substeps: 2 * s.substeps,
            initial_substeps: 2 * s.initial_substeps,
            ..s
        };
        let (a, b) = (KseSolver::new(&s).unwrap(), KseSolver::new(&fine).unwrap());
        for (t1, t2) in [(0.8, 0.5), (1.0, 1.0), (0.9, 0.75)] {
            let u0 = s.initial_condition(t1, t2);
            let ua = a.solve(&u0, 100).unwrap();
            let ub = b.solve(&u0, 100).unwrap();
            let d = max_diff(&ua[100], &ub[100]);
            assert!(d <= 1e-6, "tau ({t1}, {t2}): {d:e}");
        }
    }

    #[test]
    fn rejects_odd_grids() {
        let s = KseSpec {
            grid_points: 51,
            ..KseSpec::default()
        };
        assert!(KseSolver::new(&s).is_err());
    }
}
