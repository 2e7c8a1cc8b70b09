//! The invariant suites named by the acceptance gate. Each suite is a
//! strategy plus a check, so `properties.rs` can drive it through `proptest!`
//! and `acceptance.rs` through a deterministic `TestRunner`.

#![allow(dead_code)]

use kedmd::losses::{regularization, LossWeights};
use kedmd::trainer::batch_indices;
use kedmd::{c64, fit_sk, KernelKind, PrimitiveKernel, SnapshotSet, WeightedKernelSum};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const KINDS: [KernelKind; 5] = [
    KernelKind::Rbf,
    KernelKind::Linear,
    KernelKind::Cosine,
    KernelKind::Nngp,
    KernelKind::EmbeddedRbf,
];

pub fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, dim)
}

pub fn point_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..5).prop_flat_map(|d| (point(d), point(d)))
}

pub fn primitive() -> impl Strategy<Value = PrimitiveKernel> {
    (0..KINDS.len(), 0.2..3.0f64, 0.1..2.0f64).prop_map(|(k, p, q)| {
        let kind = KINDS[k];
        let params = if kind == KernelKind::Nngp { vec![p, q] } else { vec![p] };
        PrimitiveKernel::from_params(kind, &params).unwrap()
    })
}

pub fn kernel_sum() -> impl Strategy<Value = WeightedKernelSum> {
    prop::collection::vec((primitive(), prop_oneof![-2.0..-0.1f64, 0.1..2.0f64]), 1..5).prop_map(|v| {
        let (p, w): (Vec<_>, Vec<_>) = v.into_iter().unzip();
        WeightedKernelSum::new(p, w).unwrap()
    })
}

/// Only positive semidefinite kinds, so Gram matrices behave.
pub fn pd_kernel_sum() -> impl Strategy<Value = WeightedKernelSum> {
    prop::collection::vec((0.3..2.0f64, 0.2..1.0f64, any::<bool>()), 1..4).prop_map(|v| {
        let (p, w): (Vec<_>, Vec<_>) = v
            .into_iter()
            .map(|(s, w, emb)| {
                let kind = if emb { KernelKind::EmbeddedRbf } else { KernelKind::Rbf };
                (PrimitiveKernel::from_params(kind, &[s]).unwrap(), w)
            })
            .unzip();
        WeightedKernelSum::new(p, w).unwrap()
    })
}

pub fn snapshots(n: usize, dim: usize) -> impl Strategy<Value = SnapshotSet> {
    (
        prop::collection::vec(point(dim), n),
        prop::collection::vec(point(dim), n),
    )
        .prop_map(|(x, y)| SnapshotSet::from_rows(&x, &y).unwrap())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

pub type SymmetryCase = (PrimitiveKernel, WeightedKernelSum, (Vec<f64>, Vec<f64>));

pub fn symmetry_case() -> impl Strategy<Value = SymmetryCase> {
    (primitive(), kernel_sum(), point_pair())
}

/// `g(x, y) = g(y, x)` for every primitive kind and for weighted sums.
pub fn check_symmetry((p, k, (x, y)): SymmetryCase) -> Result<(), TestCaseError> {
    let (a, b) = (p.eval(&x, &y).unwrap(), p.eval(&y, &x).unwrap());
    prop_assert!(a.is_finite() && close(a, b), "{:?}: {a} vs {b}", p.kind());
    let (a, b) = (k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
    prop_assert!(a.is_finite() && close(a, b), "sum: {a} vs {b}");
    Ok(())
}

pub type ScaleCase = (WeightedKernelSum, f64, (Vec<f64>, Vec<f64>));

pub fn scale_case() -> impl Strategy<Value = ScaleCase> {
    (kernel_sum(), prop_oneof![-5.0..-0.01f64, 0.01..5.0f64], point_pair())
}

/// Scaling every outer weight by `c != 0` changes neither the normalized
/// weights' L1 norm (always 1) nor the kernel value.
pub fn check_scale_invariance((k, c, (x, y)): ScaleCase) -> Result<(), TestCaseError> {
    let scaled = WeightedKernelSum::new(k.primitives().to_vec(), k.weights().iter().map(|w| c * w).collect()).unwrap();
    for kk in [&k, &scaled] {
        let l1: f64 = kk.normalized_weights().unwrap().iter().map(|w| w.abs()).sum();
        prop_assert!((l1 - 1.0).abs() < 1e-14, "L1 {l1}");
    }
    let (a, b) = (k.eval(&x, &y).unwrap(), scaled.eval(&x, &y).unwrap());
    prop_assert!(close(a, b), "{a} vs {b}");
    Ok(())
}

pub type BatchCase = (usize, usize, u64, usize);

pub fn batch_case() -> impl Strategy<Value = BatchCase> {
    (0usize..300, 1usize..12, any::<u64>(), 1usize..50)
}

/// Each epoch's batches partition the rows, with sizes differing by at most
/// one, and are reproducible from `(seed, epoch)`.
pub fn check_batch_coverage((n, batches, seed, epoch): BatchCase) -> Result<(), TestCaseError> {
    let b = batch_indices(n, batches, seed, epoch);
    prop_assert_eq!(b.len(), batches);
    let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
    prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    let mut all: Vec<usize> = b.concat();
    all.sort_unstable();
    prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    prop_assert_eq!(b, batch_indices(n, batches, seed, epoch));
    Ok(())
}

pub type SpectrumCase = (WeightedKernelSum, SnapshotSet, f64);

pub fn spectrum_case() -> impl Strategy<Value = SpectrumCase> {
    (
        pd_kernel_sum(),
        (2usize..12, 1usize..3).prop_flat_map(|(n, d)| snapshots(n, d)),
        prop_oneof![Just(0.0), 1e-8..1e-2f64],
    )
}

/// The spectrum of the real operator is closed under conjugation, and every
/// pair satisfies `K v = lambda v`, `w K = lambda w` to `1e-8 |K|`.
pub fn check_conjugate_closure((k, s, beta): SpectrumCase) -> Result<(), TestCaseError> {
    let m = fit_sk(&k, &s, beta).unwrap();
    let kk = m.k();
    let n = kk.nrows();
    let mut kn = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            kn += kk[(i, j)].powi(2);
        }
    }
    let tol = 1e-8 * kn.sqrt().max(1e-300);
    let vals = m.eigenvalues();
    for l in vals {
        let closest = vals.iter().map(|m| (m - l.conj()).norm()).fold(f64::INFINITY, f64::min);
        prop_assert!(closest <= tol.max(1e-14), "{l} has no conjugate partner ({closest:e})");
    }
    let sp = m.spectrum();
    for j in 0..n {
        let lam = sp.values[j];
        let (mut right, mut left) = (0.0f64, 0.0f64);
        for i in 0..n {
            let mut kv = c64::new(0.0, 0.0);
            let mut wk = c64::new(0.0, 0.0);
            for t in 0..n {
                kv += sp.right[(t, j)] * kk[(i, t)];
                wk += sp.left[(j, t)] * kk[(t, i)];
            }
            right = right.max((kv - lam * sp.right[(i, j)]).norm());
            left = left.max((wk - lam * sp.left[(j, i)]).norm());
        }
        prop_assert!(
            right <= tol.max(1e-14) && left <= tol.max(1e-14),
            "pair {j}: {right:e} {left:e}"
        );
    }
    Ok(())
}

pub type L1Case = (WeightedKernelSum, f64);

pub fn l1_case() -> impl Strategy<Value = L1Case> {
    (kernel_sum(), 1e-10..1.0f64)
}

/// On normalized weights the L1 term equals `beta1` for every kernel and
/// contributes no gradient.
pub fn check_l1_constancy((k, beta1): L1Case) -> Result<(), TestCaseError> {
    let w = LossWeights {
        beta1,
        beta2: 0.0,
        ..LossWeights::default()
    };
    let r = regularization(&k, &w).unwrap();
    prop_assert!((r.value - beta1).abs() <= 1e-14 * beta1, "{} vs {beta1}", r.value);
    prop_assert!(r.grad.iter().all(|g| *g == 0.0));
    Ok(())
}

/// Runs a suite with a fixed RNG; `Err` carries the minimal failing input.
pub fn run_suite<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, check).map_err(|e| e.to_string())
}
