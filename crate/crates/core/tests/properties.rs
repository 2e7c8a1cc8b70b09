//! Property tests for the invariants the rest of the crate relies on.

mod invariants;

use invariants::*;
use kedmd::systems::modulo::modulo_step;
use kedmd::systems::TrajectoryBundle;
use kedmd::trainer::{schedule_lookup, subsample_centers};
use kedmd::{fit_sk, KernelKind, PrimitiveKernel, PrunePolicy, SnapshotSet, WeightedKernelSum};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kernel_symmetry(c in symmetry_case()) {
        check_symmetry(c)?;
    }

    #[test]
    fn normalization_scale_invariance(c in scale_case()) {
        check_scale_invariance(c)?;
    }

    #[test]
    fn batch_coverage(c in batch_case()) {
        check_batch_coverage(c)?;
    }

    #[test]
    fn l1_term_constancy(c in l1_case()) {
        check_l1_constancy(c)?;
    }

    #[test]
    fn primitive_param_count_matches_kind(p in primitive()) {
        prop_assert_eq!(p.params().len(), p.kind().param_count());
        prop_assert_eq!(p.param_count(), if p.kind() == KernelKind::Nngp { 2 } else { 1 });
    }

    #[test]
    fn primitive_diagonal_values(p in primitive(), x in (1usize..5).prop_flat_map(point)) {
        let v = p.eval(&x, &x).unwrap();
        let norm2: f64 = x.iter().map(|a| a * a).sum();
        match p {
            PrimitiveKernel::Rbf { .. } | PrimitiveKernel::EmbeddedRbf { .. } | PrimitiveKernel::Cosine { .. } => {
                prop_assert_eq!(v, 1.0)
            }
            PrimitiveKernel::Linear { c1 } => prop_assert!((v - c1 * c1 * norm2).abs() <= 1e-12 * (1.0 + v.abs())),
            PrimitiveKernel::Nngp { .. } => prop_assert!(v.is_finite() && v > 0.0),
        }
    }

    #[test]
    fn sum_equals_weighted_primitives(k in kernel_sum(), (x, y) in (1usize..4).prop_flat_map(|d| (point(d), point(d)))) {
        let wbar: f64 = k.weights().iter().map(|w| w.abs()).sum();
        let direct: f64 = k
            .primitives()
            .iter()
            .zip(k.weights())
            .map(|(p, w)| (w / wbar).powi(2) * p.eval(&x, &y).unwrap())
            .sum();
        let v = k.eval(&x, &y).unwrap();
        prop_assert!((v - direct).abs() <= 1e-12 * (1.0 + v.abs()));
        prop_assert!((v - k.eval(&y, &x).unwrap()).abs() <= 1e-12 * (1.0 + v.abs()));
    }

    /// Central differences over the flat parameter vector, including the
    /// dependence of every normalized weight on `w_bar`.
    #[test]
    fn parameter_gradient_matches_finite_differences(
        k in kernel_sum(),
        (x, y) in (1usize..4).prop_flat_map(|d| (point(d), point(d))),
    ) {
        let g = k.grad_params(&x, &y).unwrap();
        let analytic: Vec<f64> = g.outer.iter().copied().chain(g.inner.iter().flatten().copied()).collect();
        let p0 = k.params();
        prop_assert_eq!(analytic.len(), p0.len());
        for i in 0..p0.len() {
            let h = 1e-6 * (1.0 + p0[i].abs());
            let at = |delta: f64| {
                let mut q = k.clone();
                let mut p = p0.clone();
                p[i] += delta;
                q.set_params(&p).unwrap();
                q.eval(&x, &y).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            prop_assert!((fd - analytic[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: fd {fd} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn outer_gradients_sum_against_weights_to_zero(k in kernel_sum(), (x, y) in (1usize..4).prop_flat_map(|d| (point(d), point(d)))) {
        // g is homogeneous of degree 0 in w, so Euler gives sum_i w_i dg/dw_i = 0.
        let g = k.grad_params(&x, &y).unwrap();
        let euler: f64 = g.outer.iter().zip(k.weights()).map(|(d, w)| d * w).sum();
        let scale: f64 = g.outer.iter().zip(k.weights()).map(|(d, w)| (d * w).abs()).sum();
        prop_assert!(euler.abs() <= 1e-12 * (1.0 + scale));
    }

    #[test]
    fn keep_largest_keeps_the_largest(w in prop::collection::vec(0.01..5.0f64, 1..7), n in 1usize..7) {
        let n = n.min(w.len());
        let prims = vec![PrimitiveKernel::from_params(KernelKind::Rbf, &[1.0]).unwrap(); w.len()];
        let k = WeightedKernelSum::new(prims, w.clone()).unwrap();
        let kept = PrunePolicy::KeepLargest(n).select(k.weights()).unwrap();
        prop_assert_eq!(kept.len(), n);
        let min_kept = kept.iter().map(|&i| w[i]).fold(f64::INFINITY, f64::min);
        for (i, wi) in w.iter().enumerate() {
            if !kept.contains(&i) {
                prop_assert!(*wi <= min_kept);
            }
        }
    }

    #[test]
    fn centers_are_distinct_rows_and_reproducible(n_rows in 1usize..80, frac in 0.0..1.0f64, seed in any::<u64>()) {
        let rows: Vec<Vec<f64>> = (0..n_rows).map(|i| vec![i as f64]).collect();
        let ys: Vec<Vec<f64>> = (0..n_rows).map(|i| vec![i as f64 + 0.5]).collect();
        let data = SnapshotSet::from_rows(&rows, &ys).unwrap();
        let n = 1 + ((n_rows - 1) as f64 * frac) as usize;
        let c = subsample_centers(&data, n, seed).unwrap();
        prop_assert_eq!(c.len(), n);
        let mut picked: Vec<f64> = (0..n).map(|i| c.x_row(i)[0]).collect();
        for i in 0..n {
            prop_assert_eq!(c.y_row(i)[0], c.x_row(i)[0] + 0.5);
        }
        picked.dedup();
        prop_assert_eq!(picked.len(), n);
        let again = subsample_centers(&data, n, seed).unwrap();
        prop_assert_eq!(c.x().to_owned(), again.x().to_owned());
        prop_assert!(subsample_centers(&data, n_rows + 1, seed).is_err());
    }

    #[test]
    fn schedule_is_piecewise_constant(epoch in 1usize..100) {
        let s = [(1, 1e-4), (5, 1e-6), (40, 1e-8)];
        let expect = if epoch >= 40 { 1e-8 } else if epoch >= 5 { 1e-6 } else { 1e-4 };
        prop_assert_eq!(schedule_lookup(&s, epoch), expect);
    }

    #[test]
    fn modulo_stays_on_the_circle(omega in -10.0..10.0f64, x in -50.0..50.0f64) {
        let y = modulo_step(omega, x);
        prop_assert!((0.0..2.0 * std::f64::consts::PI).contains(&y));
        let d = (y - (x + omega)).rem_euclid(2.0 * std::f64::consts::PI);
        prop_assert!(d < 1e-9 || 2.0 * std::f64::consts::PI - d < 1e-9);
    }

    #[test]
    fn bundle_pairs_consecutive_states(traj in prop::collection::vec(prop::collection::vec(point(2), 2..8), 1..5)) {
        let steps = traj[0].len();
        let traj: Vec<Vec<Vec<f64>>> = traj.into_iter().map(|mut t| { t.resize(steps, vec![0.0, 0.0]); t }).collect();
        let b = TrajectoryBundle { dim: 2, dt: 0.1, trajectories: traj.clone() };
        let s = b.to_snapshots(1).unwrap();
        prop_assert_eq!(s.len(), traj.len() * (steps - 1));
        for (r, p) in b.pairs(1).iter().enumerate() {
            prop_assert_eq!(&s.x_row(r), &traj[p.trajectory][p.step]);
            prop_assert_eq!(&s.y_row(r), &traj[p.trajectory][p.step + 1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conjugate_pair_closure(c in spectrum_case()) {
        check_conjugate_closure(c)?;
    }

    #[test]
    fn residuals_are_nonnegative(k in pd_kernel_sum(), s in (3usize..10).prop_flat_map(|n| snapshots(n, 2))) {
        let m = fit_sk(&k, &s, 1e-6).unwrap();
        for r in m.residuals_lenient(&s).unwrap().into_iter().flatten() {
            prop_assert!(r.is_finite() && r >= 0.0);
        }
    }
}
