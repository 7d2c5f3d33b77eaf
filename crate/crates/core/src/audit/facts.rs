//! Audits of the gate extremes, the probability facts used by the tail
//! argument, and hockey-stick algebra.

use statrs::distribution::{Beta, ChiSquared, ContinuousCDF, Normal};

use crate::divergences::{
    hockey_stick_discrete, hockey_stick_discrete_integral, hockey_stick_forms, kolmogorov_pvalue,
    ks_statistic, tv_1d, weak_triangle, Density1D,
};
use crate::error::{Error, Result};
use crate::privacy::{ptr_check_with, PrivacyParams, PtrOutcome, PtrRule};
use crate::rng::{unit_sphere, RngStream};

use super::{par_trials, AuditReport, Verdict};

fn stat_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidParams(e.to_string())
}

/// Seeds per `(ε, δ)` draw in the gate audit.
const PTR_SEEDS: u64 = 16;

/// The gate passes at score 0 and fails at `2 ln(1/δ)/ε + 4` for the
/// threshold rule (resp. twice the radius for the calibrated rule), for
/// every noise draw.
pub fn audit_ptr_extremes(trials: usize, base: &RngStream) -> Result<AuditReport> {
    let rows = par_trials(trials, base, |_, rng| {
        let eps = rng.uniform(0.05, 1.0);
        let delta = 10f64.powf(rng.uniform(-12.0, (eps / 10.0).log10()));
        let p = PrivacyParams::new(eps, delta)?;
        let mut bad = 0usize;
        let mut ratio_threshold = 0.0f64;
        let mut ratio_calibrated = 0.0f64;
        for rule in [PtrRule::Threshold, PtrRule::Calibrated] {
            let hi = match rule {
                PtrRule::Threshold => 2.0 * (1.0 / delta).ln() / eps + 4.0,
                PtrRule::Calibrated => rule.fail_threshold(&p),
            };
            for s in 0..PTR_SEEDS {
                let mut g = rng.derive(s);
                if ptr_check_with(rule, 0.0, &p, &mut g) != PtrOutcome::Pass {
                    bad += 1;
                }
                if ptr_check_with(rule, hi, &p, &mut g) != PtrOutcome::Fail {
                    bad += 1;
                }
            }
            if rule.pass_probability(0.0, &p) != 1.0 || rule.pass_probability(hi, &p) != 0.0 {
                bad += 1;
            }
            let r = rule.effective_delta(&p) / delta;
            match rule {
                PtrRule::Threshold => ratio_threshold = r,
                PtrRule::Calibrated => ratio_calibrated = r,
            }
        }
        Ok((bad, ratio_threshold, ratio_calibrated))
    })?;
    let mut report = AuditReport::new("ptr_extremes", base.seed(), "none");
    report.trials = rows.len();
    report.failures = rows.iter().filter(|r| r.0 > 0).count();
    let fold = |f: fn(&(usize, f64, f64)) -> f64, init: f64, g: fn(f64, f64) -> f64| {
        rows.iter().map(f).fold(init, g)
    };
    report.stat("seeds_per_trial", PTR_SEEDS as f64);
    report.stat("threshold_min_effective_delta_ratio", fold(|r| r.1, f64::INFINITY, f64::min));
    report.stat("threshold_max_effective_delta_ratio", fold(|r| r.1, 0.0, f64::max));
    report.stat("calibrated_max_effective_delta_ratio", fold(|r| r.2, 0.0, f64::max));
    report.note("threshold rule: exact privacy level is effective_delta, of order sqrt(delta)");
    report.verdict = Verdict::from_bool(report.failures == 0);
    Ok(report)
}

/// `P(χ²_k ≥ t) ≤ exp(−(√(2t − k) − √k)²/4)` for `t ≥ k`.
pub fn chi_square_tail_bound(k: usize, t: f64) -> f64 {
    let k = k as f64;
    (-((2.0 * t - k).sqrt() - k.sqrt()).powi(2) / 4.0).exp()
}

const CHI_DOF: usize = 5;
const SPHERE_N: usize = 20;
const SPHERE_I: usize = 3;
const MIXTURE_N: usize = 10;
const HW_DIM: usize = 6;
const SPHERE_KS_MAX: f64 = 0.02;
const MIXTURE_MIN_PVALUE: f64 = 0.01;

/// Monte-Carlo checks of the chi-square tail, the sphere-coordinate law,
/// Gaussian stability under independent unit weights, and the quadratic
/// form mean, plus exact checks of Beta-tail monotonicity.
pub fn audit_tail_facts(trials: usize, base: &RngStream) -> Result<AuditReport> {
    let mut report = AuditReport::new("tail_facts", base.seed(), "none");
    let nf = trials as f64;
    let mut failures = 0usize;
    let mut checks = 0usize;

    // Chi-square tail.
    let chi = ChiSquared::new(CHI_DOF as f64).map_err(stat_err)?;
    let mut rng = base.derive(0);
    let draws: Vec<f64> = (0..trials)
        .map(|_| rng.normals(CHI_DOF).iter().map(|x| x * x).sum())
        .collect();
    let mut worst_excess = f64::NEG_INFINITY;
    for j in 0..10 {
        let t = CHI_DOF as f64 * (1.0 + 0.5 * j as f64);
        let bound = chi_square_tail_bound(CHI_DOF, t);
        let emp = draws.iter().filter(|&&x| x >= t).count() as f64 / nf;
        let sigma = (bound * (1.0 - bound) / nf).sqrt();
        checks += 2;
        if emp > bound + 3.0 * sigma {
            failures += 1;
        }
        // Exact route: the bound must dominate the true tail too.
        if chi.sf(t) > bound {
            failures += 1;
        }
        worst_excess = worst_excess.max((emp - bound) / sigma.max(f64::MIN_POSITIVE));
    }
    report.stat("chi_square_worst_excess_sigmas", worst_excess);

    // Squared norm of the first i coordinates of a uniform unit vector.
    let beta = Beta::new(SPHERE_I as f64 / 2.0, (SPHERE_N - SPHERE_I) as f64 / 2.0).map_err(stat_err)?;
    let mut rng = base.derive(1);
    let m = trials.max(100);
    let sq: Vec<f64> = (0..m)
        .map(|_| unit_sphere(&mut rng, SPHERE_N)[..SPHERE_I].iter().map(|x| x * x).sum())
        .collect();
    let ks = ks_statistic(&sq, |x| beta.cdf(x));
    checks += 1;
    if ks > SPHERE_KS_MAX {
        failures += 1;
    }
    report.stat("sphere_ks", ks);
    report.stat("sphere_ks_pvalue", kolmogorov_pvalue(ks, m as f64));

    // Σ aᵢXᵢ with a on the sphere independent of X ~ N(0, I).
    let normal = Normal::new(0.0, 1.0).map_err(stat_err)?;
    let mut rng = base.derive(2);
    let mix: Vec<f64> = (0..m)
        .map(|_| {
            let a = unit_sphere(&mut rng, MIXTURE_N);
            let x = rng.normals(MIXTURE_N);
            a.iter().zip(&x).map(|(p, q)| p * q).sum()
        })
        .collect();
    let ks_mix = ks_statistic(&mix, |x| normal.cdf(x));
    let p_mix = kolmogorov_pvalue(ks_mix, m as f64);
    checks += 1;
    if p_mix < MIXTURE_MIN_PVALUE {
        failures += 1;
    }
    report.stat("mixture_ks", ks_mix);
    report.stat("mixture_ks_pvalue", p_mix);

    // E[XᵀAX] = tr(A).
    let mut rng = base.derive(3);
    let mut a = vec![vec![0.0; HW_DIM]; HW_DIM];
    for i in 0..HW_DIM {
        for j in 0..=i {
            let v = rng.uniform(-1.0, 1.0);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    let tr: f64 = (0..HW_DIM).map(|i| a[i][i]).sum();
    let frob: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let mean = (0..trials)
        .map(|_| {
            let x = rng.normals(HW_DIM);
            let mut s = 0.0;
            for i in 0..HW_DIM {
                for j in 0..HW_DIM {
                    s += x[i] * a[i][j] * x[j];
                }
            }
            s
        })
        .sum::<f64>()
        / nf;
    let hw_tol = 4.0 * frob / nf.sqrt();
    checks += 1;
    if (mean - tr).abs() > hw_tol {
        failures += 1;
    }
    report.stat("quadratic_form_mean_error", (mean - tr).abs());
    report.stat("quadratic_form_tolerance", hw_tol);

    // Beta tails of sphere coordinates decrease in the threshold and
    // vanish well above the mean i/n. The decay constant is not pinned
    // down, so only the shape is checked.
    let mut beta_ok = true;
    for (n, i) in [(20usize, 3usize), (100, 3), (100, 10), (1000, 5)] {
        let b = Beta::new(i as f64 / 2.0, (n - i) as f64 / 2.0).map_err(stat_err)?;
        let mean = i as f64 / n as f64;
        let tails: Vec<f64> = (1..=8).map(|c| b.sf((c as f64 * mean).min(1.0))).collect();
        beta_ok &= tails.windows(2).all(|w| w[1] <= w[0]);
        beta_ok &= tails[7] < 1e-3 * tails[0];
    }
    checks += 1;
    if !beta_ok {
        failures += 1;
    }

    report.trials = checks;
    report.failures = failures;
    report.stat("draws", nf);
    report.verdict = Verdict::from_bool(failures == 0);
    Ok(report)
}

const FORM_TOL: f64 = 1e-10;

fn density_pairs() -> Vec<(&'static str, Density1D, Density1D)> {
    let sph = Density1D::sphere_coordinate(12);
    vec![
        ("normal_shift", Density1D::normal(0.0, 1.0), Density1D::normal(0.7, 1.0)),
        ("normal_scale", Density1D::normal(0.0, 1.0), Density1D::normal(0.0, 1.6)),
        ("normal_laplace", Density1D::normal(0.0, 1.0), Density1D::laplace(0.2, 0.8)),
        ("laplace_shift", Density1D::laplace(0.0, 1.0), Density1D::laplace(1.0, 1.0)),
        ("uniform_normal", Density1D::uniform(-1.0, 1.5), Density1D::normal(0.0, 1.0)),
        ("sphere_scaled", sph.affine(0.0, 0.95), sph.clone()),
    ]
}

/// Agreement of the two hockey-stick forms, its `ε = 0` case against
/// total variation, and the weak triangle inequality on random finite
/// distributions.
pub fn audit_divergence_algebra(trials: usize, base: &RngStream) -> Result<AuditReport> {
    let mut report = AuditReport::new("divergence_algebra", base.seed(), "none");
    let mut failures = 0usize;
    let mut checks = 0usize;
    let mut max_gap = 0.0f64;
    let mut max_tv_gap = 0.0f64;
    for (_, p, q) in density_pairs() {
        for eps in [0.0, 0.1, 0.5, 1.0] {
            for (a, b) in [(&p, &q), (&q, &p)] {
                let h = hockey_stick_forms(a, b, eps)?;
                let gap = (h.integral_form - h.event_form).abs();
                max_gap = max_gap.max(gap);
                checks += 1;
                if gap > FORM_TOL {
                    failures += 1;
                }
                if eps == 0.0 {
                    let tv = tv_1d(a, b)?;
                    let g = (tv - h.event_form).abs();
                    max_tv_gap = max_tv_gap.max(g);
                    checks += 1;
                    if g > FORM_TOL {
                        failures += 1;
                    }
                }
            }
        }
    }
    // Closed form for shifted unit normals.
    let shifted =
        hockey_stick_forms(&Density1D::normal(0.0, 1.0), &Density1D::normal(0.7, 1.0), 0.0)?.event_form;
    let exact = 2.0 * Normal::new(0.0, 1.0).map_err(stat_err)?.cdf(0.35) - 1.0;
    checks += 1;
    if (shifted - exact).abs() > FORM_TOL {
        failures += 1;
    }
    report.stat("normal_shift_tv_error", (shifted - exact).abs());

    let rows = par_trials(trials, base, |_, rng| {
        let n = rng.range(2, 9);
        let draw = |rng: &mut RngStream| {
            let w: Vec<f64> = (0..n).map(|_| -rng.open01().ln()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let (p, q, r) = (draw(rng), draw(rng), draw(rng));
        let e1 = rng.uniform(0.0, 2.0);
        let e2 = rng.uniform(0.0, 2.0);
        let wt = weak_triangle(&p, &q, &r, e1, e2)?;
        let gap = (hockey_stick_discrete(&p, &q, e1)? - hockey_stick_discrete_integral(&p, &q, e1)?).abs();
        Ok((wt.holds, wt.rhs - wt.lhs, gap))
    })?;
    let tri_bad = rows.iter().filter(|r| !r.0).count();
    let disc_bad = rows.iter().filter(|r| r.2 > FORM_TOL).count();
    checks += 2 * rows.len();
    failures += tri_bad + disc_bad;
    report.stat("max_form_gap", max_gap);
    report.stat("max_tv_gap", max_tv_gap);
    report.stat("triangle_violations", tri_bad as f64);
    report.stat("triangle_min_slack", rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min));
    report.stat("discrete_form_violations", disc_bad as f64);
    report.trials = checks;
    report.failures = failures;
    report.verdict = Verdict::from_bool(failures == 0);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_bound_is_one_at_mean() {
        assert!((chi_square_tail_bound(5, 5.0) - 1.0).abs() < 1e-15);
        assert!(chi_square_tail_bound(5, 20.0) < 0.05);
    }

    #[test]
    fn small_runs_pass() {
        let base = RngStream::new(3, 0);
        let r = audit_ptr_extremes(20, &base).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = audit_divergence_algebra(50, &base).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
