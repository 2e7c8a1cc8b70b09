//! Randomized check that the simplified and truncated operators agree.
//!
//! On a positive definite Gram matrix `G_xx = Z S^2 Z^T` with nothing
//! truncated, `K_tr = (Z S)^+ K_sk (Z S)`, so both share their spectrum and
//! eigenvectors map across by `Z S` and `S^+ Z^T`. Each instance measures how
//! far the fitted matrices are from these identities.

use faer::{c64, Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ensure_symmetric, Embedding, PrimitiveKernel, WeightedKernelSum};
use crate::koopman::{fit_sk, fit_tr, MapDirection, SnapshotSet};
use crate::linalg::{self, Spectrum};

/// Instances whose Gram matrix has `lambda_min / lambda_max` below this are
/// redrawn: the identities hold exactly only without truncation, and a
/// conditioning floor keeps round-off well below the tolerance.
pub const MIN_GRAM_RATIO: f64 = 1e-4;

/// Eigenvalues below `NONZERO_REL * max |lambda|` count as zero.
pub const NONZERO_REL: f64 = 1e-8;

/// Truncation tolerance handed to `fit_tr`; far below `sqrt(MIN_GRAM_RATIO)`.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    pub instances: usize,
    /// Instance sizes are drawn from `1..=max_points`.
    pub max_points: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        EquivalenceConfig {
            instances: 200,
            max_points: 20,
            seed: 0,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub n_points: usize,
    pub nonzero: usize,
    /// Largest distance between matched nonzero eigenvalues, relative to `max(1, max |lambda|)`.
    pub eig_mismatch: f64,
    /// `|K_tr - (Z S)^+ K_sk (Z S)|_F / |K_tr|_F`.
    pub operator_mismatch: f64,
    /// Largest eigen-equation defect of mapped vectors in either direction, relative to `|K|_F`.
    pub vector_defect: f64,
}

impl InstanceReport {
    pub fn worst(&self) -> f64 {
        self.eig_mismatch.max(self.operator_mismatch).max(self.vector_defect)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub tol: f64,
    pub instances: Vec<InstanceReport>,
}

impl EquivalenceReport {
    pub fn max_eig_mismatch(&self) -> f64 {
        self.instances.iter().map(|r| r.eig_mismatch).fold(0.0, f64::max)
    }

    pub fn max_operator_mismatch(&self) -> f64 {
        self.instances.iter().map(|r| r.operator_mismatch).fold(0.0, f64::max)
    }

    pub fn max_vector_defect(&self) -> f64 {
        self.instances.iter().map(|r| r.vector_defect).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.instances.is_empty() && self.instances.iter().all(|r| r.worst() <= self.tol)
    }
}

/// A random sum of one to three positive definite primitives with positive weights.
pub fn random_pd_kernel(rng: &mut impl Rng) -> WeightedKernelSum {
    let count = rng.random_range(1..=3);
    let prims = (0..count)
        .map(|_| match rng.random_range(0..3) {
            0 => PrimitiveKernel::Rbf {
                sigma: rng.random_range(0.3..1.5),
            },
            1 => PrimitiveKernel::EmbeddedRbf {
                sigma: rng.random_range(0.3..1.5),
                embedding: Embedding::CosSin,
            },
            _ => PrimitiveKernel::Nngp {
                b1: rng.random_range(0.5..2.0),
                b2: rng.random_range(0.1..1.0),
            },
        })
        .collect();
    let weights = (0..count).map(|_| rng.random_range(0.2..1.0)).collect();
    WeightedKernelSum::new(prims, weights).expect("positive weights")
}

pub fn random_snapshots(rng: &mut impl Rng, n: usize, dim: usize) -> SnapshotSet {
    let mut draw = |_: usize| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let xs: Vec<Vec<f64>> = (0..n).map(&mut draw).collect();
    let ys: Vec<Vec<f64>> = (0..n).map(&mut draw).collect();
    SnapshotSet::from_rows(&xs, &ys).expect("finite rows")
}

/// `lambda_min / lambda_max` of `G_xx`, or 0 when it is not positive definite.
pub fn gram_ratio(kernel: &WeightedKernelSum, centers: &SnapshotSet) -> Result<f64> {
    let g = kernel.gram(centers.x(), centers.x())?;
    let (_, lam) = linalg::sym_eigen_desc(g.as_ref())?;
    let (max, min) = (lam[0], lam[lam.len() - 1]);
    Ok(if max > 0.0 && min > 0.0 { min / max } else { 0.0 })
}

fn frob(m: MatRef<'_, c64>) -> f64 {
    linalg::frob2_c(m).sqrt()
}

fn nonzero(values: &[c64]) -> Vec<c64> {
    let max = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    values
        .iter()
        .copied()
        .filter(|v| v.norm() > NONZERO_REL * max)
        .collect()
}

/// Greedy nearest matching; unmatched leftovers count as infinite mismatch.
fn spectrum_mismatch(a: &[c64], b: &[c64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = a.iter().chain(b).map(|v| v.norm()).fold(1.0, f64::max);
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal lengths");
        used[j] = true;
        worst = worst.max(d);
    }
    worst / scale
}

/// Largest `|w K - l w| / |w|` and `|K v - l v| / |v|` over the nonzero pairs, relative to `|K|_F`.
fn eigen_defect(k: MatRef<'_, f64>, s: &Spectrum) -> f64 {
    let kc = linalg::to_complex(k);
    let knorm = frob(kc.as_ref()).max(f64::MIN_POSITIVE);
    let max = s.spectral_radius();
    let wk = &s.left * &kc;
    let kv = &kc * &s.right;
    let mut worst = 0.0f64;
    for j in 0..s.len() {
        let l = s.values[j];
        if l.norm() <= NONZERO_REL * max {
            continue;
        }
        let (mut wn, mut we, mut vn, mut ve) = (0.0, 0.0, 0.0, 0.0);
        for q in 0..kc.nrows() {
            wn += s.left[(j, q)].norm_sqr();
            we += (wk[(j, q)] - l * s.left[(j, q)]).norm_sqr();
            vn += s.right[(q, j)].norm_sqr();
            ve += (kv[(q, j)] - l * s.right[(q, j)]).norm_sqr();
        }
        worst = worst.max((we / wn).sqrt()).max((ve / vn).sqrt());
    }
    worst / knorm
}

/// Compares `fit_sk(beta = 0)` and `fit_tr` for one kernel and center set.
pub fn check_instance(kernel: &WeightedKernelSum, centers: &SnapshotSet) -> Result<InstanceReport> {
    let sk = fit_sk(kernel, centers, 0.0)?;
    let tr = fit_tr(kernel, centers, RANK_TOL)?;
    let (z, sigma) = tr.truncation()?;
    let (n, r) = (z.nrows(), sigma.len());
    let zs = Mat::from_fn(n, r, |i, j| z[(i, j)] * sigma[j]);
    let zs_pinv = Mat::from_fn(r, n, |i, j| z[(j, i)] / sigma[i]);
    let predicted = &zs_pinv * sk.k() * &zs;
    let ktr = linalg::to_complex(tr.k());
    let diff = linalg::to_complex((predicted - tr.k()).as_ref());
    let operator_mismatch = frob(diff.as_ref()) / frob(ktr.as_ref()).max(f64::MIN_POSITIVE);

    // Without truncation both operators are N x N and similar, so the whole
    // spectra must match; otherwise only the nonzero parts are comparable.
    let (a, b) = if r == n {
        (sk.eigenvalues().to_vec(), tr.eigenvalues().to_vec())
    } else {
        (nonzero(sk.eigenvalues()), nonzero(tr.eigenvalues()))
    };
    let eig_mismatch = spectrum_mismatch(&a, &b);

    let to_sk = tr.map_spectrum(MapDirection::TrToSk, tr.spectrum())?;
    let to_tr = tr.map_spectrum(MapDirection::SkToTr, sk.spectrum())?;
    let vector_defect = eigen_defect(sk.k(), &to_sk).max(eigen_defect(tr.k(), &to_tr));
    Ok(InstanceReport {
        n_points: n,
        nonzero: nonzero(sk.eigenvalues()).len(),
        eig_mismatch,
        operator_mismatch,
        vector_defect,
    })
}

/// Draws a well-conditioned instance for `kernel` (random when `None`).
fn draw_instance(
    rng: &mut ChaCha8Rng,
    kernel: Option<&WeightedKernelSum>,
    n: usize,
    dim: Option<usize>,
) -> Result<(WeightedKernelSum, SnapshotSet)> {
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let k = kernel.cloned().unwrap_or_else(|| random_pd_kernel(rng));
        let d = dim.unwrap_or_else(|| rng.random_range(1..=3));
        let data = random_snapshots(rng, n, d);
        if gram_ratio(&k, &data)? >= MIN_GRAM_RATIO {
            return Ok((k, data));
        }
    }
    Err(Error::Numeric(format!(
        "no instance with {n} points has a Gram matrix conditioned above {MIN_GRAM_RATIO:e}"
    )))
}

/// Runs `config.instances` random instances. With `kernel` given, every
/// instance uses it on random points in `dim` dimensions; otherwise kernels
/// and dimensions (1 to 3) are random too.
pub fn run(
    config: &EquivalenceConfig,
    kernel: Option<&WeightedKernelSum>,
    dim: Option<usize>,
) -> Result<EquivalenceReport> {
    if config.max_points == 0 {
        return Err(Error::config("max_points", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = Vec::with_capacity(config.instances);
    for _ in 0..config.instances {
        let n = rng.random_range(1..=config.max_points);
        let (k, data) = draw_instance(&mut rng, kernel, n, dim)?;
        instances.push(check_instance(&k, &data)?);
    }
    Ok(EquivalenceReport {
        tol: config.tol,
        instances,
    })
}

/// Symmetry gate for user-supplied kernel functions, applied before any fit.
pub fn admit_kernel_fn(f: impl Fn(&[f64], &[f64]) -> f64, probe: &SnapshotSet) -> Result<()> {
    ensure_symmetric(f, probe.x(), 1e-12)
}
