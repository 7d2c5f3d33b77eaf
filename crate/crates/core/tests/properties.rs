//! Property tests for invariants of the linear algebra, estimators and gate.

use dpgs::data::Dataset;
use dpgs::linalg::{
    inverse_tracenorm_gap, log_det_pd, mahalanobis_sq, spectral_decomp, svd, Matrix, Vector,
};
use dpgs::privacy::{PrivacyParams, PtrRule};
use dpgs::rng::{random_rotation, uniform_subset, unit_sphere, RngStream};
use dpgs::stable::{largest_good_subset, stable_cov, EstimatorConfig};
use proptest::prelude::*;

fn spd(seed: u64, d: usize, lo: f64, hi: f64) -> Matrix {
    let mut rng = RngStream::new(seed, 9);
    let q = random_rotation(&mut rng, d);
    let s: Vec<f64> = (0..d).map(|_| rng.uniform(lo, hi)).collect();
    let m = &q * Matrix::from_diagonal(&Vector::from_vec(s)) * q.transpose();
    0.5 * (&m + m.transpose())
}

fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_gap_never_exceeds_gap(seed in any::<u64>(), d in 1usize..6, spread in 0.0f64..3.0) {
        let a = spd(seed, d, 1.0, 1.0 + spread);
        let g = inverse_tracenorm_gap(&a).unwrap();
        prop_assert!(g.inv_gap <= g.gap + 1e-12);
    }

    #[test]
    fn decompositions_reconstruct(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
        let mut rng = RngStream::new(seed, 1);
        let a = Matrix::from_fn(r, c, |_, _| rng.normal());
        let s = svd(&a).unwrap();
        prop_assert!(max_abs(&(s.reconstruct() - &a)) < 1e-10);
        let sym = &a * a.transpose();
        let e = spectral_decomp(&sym).unwrap();
        prop_assert!(max_abs(&(e.reconstruct() - &sym)) < 1e-10 * (1.0 + max_abs(&sym)));
        prop_assert!(e.eigvals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn determinant_below_trace_power(seed in any::<u64>(), d in 1usize..7) {
        let a = spd(seed, d, 0.01, 10.0);
        let bound = d as f64 * (a.trace() / d as f64).ln();
        prop_assert!(log_det_pd(&a).unwrap() <= bound + 1e-10);
    }

    #[test]
    fn mahalanobis_rotation_invariant(seed in any::<u64>(), d in 1usize..6) {
        let sigma = spd(seed, d, 0.1, 5.0);
        let mut rng = RngStream::new(seed, 2);
        let q = random_rotation(&mut rng, d);
        let v = Vector::from_vec(rng.normals(d));
        let rv = &q * &v;
        let rs = &q * &sigma * q.transpose();
        let rs = 0.5 * (&rs + rs.transpose());
        let a = mahalanobis_sq(v.as_slice(), &sigma).unwrap();
        let b = mahalanobis_sq(rv.as_slice(), &rs).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a));
    }

    #[test]
    fn good_subset_grows_with_threshold(seed in any::<u64>(), d in 1usize..4, outliers in 0usize..6) {
        let mut rng = RngStream::new(seed, 3);
        let m = 40;
        let mut rows: Vec<Vec<f64>> = (0..m).map(|_| rng.normals(d)).collect();
        for row in rows.iter_mut().take(outliers) {
            let s = rng.uniform(2.0, 20.0);
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        let y = Dataset::from_rows(&rows).unwrap();
        let lam = rng.uniform(1.0, 30.0);
        let small = largest_good_subset(&y, lam).unwrap();
        let large = largest_good_subset(&y, lam * rng.uniform(1.0, 3.0)).unwrap();
        prop_assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn zero_cov_score_means_uniform_weights(seed in any::<u64>(), d in 1usize..4, outliers in 0usize..4) {
        let mut rng = RngStream::new(seed, 4);
        let n = 160;
        let mut rows: Vec<Vec<f64>> = (0..n).map(|_| rng.normals(d)).collect();
        for row in rows.iter_mut().take(outliers) {
            for x in row.iter_mut() {
                *x *= 30.0;
            }
        }
        let x = Dataset::from_rows(&rows).unwrap();
        let cfg = EstimatorConfig::new(d as f64 + 12.0, 5).unwrap();
        let out = stable_cov(&x, &cfg).unwrap();
        if out.score == 0 {
            prop_assert!(out.uniform());
        }
        prop_assert!(out.score <= cfg.k);
        let wsum: f64 = out.weights.iter().sum();
        prop_assert!(wsum <= 1.0 + 1e-12);
    }

    #[test]
    fn gate_pass_probability_monotone(eps in 0.05f64..1.0, ld in 1.0f64..12.0, s in 0.0f64..200.0, ds in 0.0f64..10.0) {
        let delta = (10f64.powf(-ld)).min(eps / 10.0);
        let p = PrivacyParams::new(eps, delta).unwrap();
        for rule in [PtrRule::Threshold, PtrRule::Calibrated] {
            let a = rule.pass_probability(s, &p);
            let b = rule.pass_probability(s + ds, &p);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a + 1e-15);
        }
    }

    #[test]
    fn sphere_points_are_unit(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = RngStream::new(seed, 5);
        let v = unit_sphere(&mut rng, n);
        let norm: f64 = v.iter().map(|x| x * x).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subsets_are_sorted_distinct(seed in any::<u64>(), n in 1usize..200, frac in 0.0f64..1.0) {
        let m = (n as f64 * frac) as usize;
        let mut rng = RngStream::new(seed, 6);
        let s = uniform_subset(&mut rng, n, m).unwrap();
        prop_assert_eq!(s.len(), m);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.iter().all(|&i| i < n));
    }
}
