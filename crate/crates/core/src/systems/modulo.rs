use std::f64::consts::TAU;

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation of the circle by `omega`: `x -> (x + omega) mod 2 pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModuloSpec {
    pub omega: f64,
}

impl Default for ModuloSpec {
    fn default() -> Self {
        ModuloSpec {
            omega: 1.1 * std::f64::consts::PI,
        }
    }
}

impl ModuloSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.omega.is_finite() {
            return Err(Error::config("system.omega", "must be finite"));
        }
        Ok(())
    }
}

/// `(x + omega) mod 2 pi`, always in `[0, 2 pi)`.
pub fn modulo_step(omega: f64, x: f64) -> f64 {
    let r = (x + omega).rem_euclid(TAU);
    // rem_euclid can round up to exactly 2 pi for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// `exp(i omega j)` for `j = 0..count`.
pub fn modulo_true_eigenvalues(omega: f64, count: usize) -> Vec<c64> {
    (0..count)
        .map(|j| {
            let a = omega * j as f64;
            c64::new(a.cos(), a.sin())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn step_examples() {
        assert_eq!(modulo_step(0.0, 1.25), 1.25);
        assert!((modulo_step(1.1 * PI, 1.5 * PI) - 0.6 * PI).abs() < 1e-12);
        assert_eq!(modulo_step(0.0, -1e-300), 0.0);
        let mut x = 0.0;
        for _ in 0..20 {
            x = modulo_step(1.1 * PI, x);
            assert!((0.0..TAU).contains(&x));
        }
    }

    #[test]
    fn true_eigenvalues() {
        let ev = modulo_true_eigenvalues(1.1 * PI, 20);
        assert_eq!(ev[0], c64::new(1.0, 0.0));
        assert!((ev[1].re + 0.95106).abs() < 1e-5 && (ev[1].im + 0.30902).abs() < 1e-5);
        assert!(ev.iter().all(|v| (v.norm() - 1.0).abs() <= 1e-15));
    }
}
