use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `x1' = x2`, `x2' = -d1 x2 - d2 x1 - d3 x1^3`, sampled every `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DuffingSpec {
    pub delta: [f64; 3],
    pub dt: f64,
    /// RK4 steps per snapshot interval.
    pub substeps: usize,
    /// Initial conditions are uniform on `[ic_low, ic_high]^2`.
    pub ic_low: f64,
    pub ic_high: f64,
}

impl Default for DuffingSpec {
    fn default() -> Self {
        DuffingSpec {
            delta: [0.5, -1.0, 1.0],
            dt: 0.1,
            substeps: 10,
            ic_low: -2.0,
            ic_high: 2.0,
        }
    }
}

impl DuffingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("system.dt", "Duffing dt must be positive"));
        }
        if self.substeps == 0 {
            return Err(Error::config("system.substeps", "must be positive"));
        }
        if self.delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::config("system.delta", "must be finite"));
        }
        if !(self.ic_low < self.ic_high) {
            return Err(Error::config("system.ic_low", "must be below ic_high"));
        }
        Ok(())
    }

    fn rhs(&self, x: [f64; 2]) -> [f64; 2] {
        let [d1, d2, d3] = self.delta;
        [x[1], -d1 * x[1] - d2 * x[0] - d3 * x[0] * x[0] * x[0]]
    }

    fn rk4(&self, x: [f64; 2], h: f64) -> [f64; 2] {
        let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        let k1 = self.rhs(x);
        let k2 = self.rhs(add(x, k1, h / 2.0));
        let k3 = self.rhs(add(x, k2, h / 2.0));
        let k4 = self.rhs(add(x, k3, h));
        [
            x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    }

    /// The flow over one snapshot interval.
    pub fn step(&self, x: [f64; 2]) -> [f64; 2] {
        let h = self.dt / self.substeps as f64;
        (0..self.substeps).fold(x, |x, _| self.rk4(x, h))
    }

    /// `steps + 1` states starting at `x0`.
    pub fn trajectory(&self, x0: [f64; 2], steps: usize) -> Result<Vec<[f64; 2]>> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut x = x0;
        out.push(x);
        for t in 0..steps {
            x = self.step(x);
            if !(x[0].is_finite() && x[1].is_finite()) {
                return Err(Error::NonFinite {
                    context: "Duffing state",
                    index: t + 1,
                });
            }
            out.push(x);
        }
        Ok(out)
    }
}
