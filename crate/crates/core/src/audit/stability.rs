//! Adjacent-dataset audits: score sensitivity, covariance stability and
//! mean stability.

use crate::data::Dataset;
use crate::error::Result;
use crate::linalg::{mahalanobis_sq, psd_sandwich_check, relative_tracenorm, spectral_decomp, sym_sqrt, Matrix, Vector};
use crate::privacy::SamplerPlan;
use crate::rng::{gaussian_vector, random_rotation, uniform_subset, unit_sphere, RngStream};
use crate::stable::{
    degree_representative, pair_and_rescale, stable_cov, stable_cov_paired, stable_mean, WeightVectorOutput,
    WeightedCovOutput, E2,
};

use super::{mode_label, par_trials, random_covariance, random_mean, AdjacentPair, AuditReport, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Replacement {
    Same,
    Fresh,
    /// `10⁶` standard deviations out.
    Far,
    /// Around the outlier threshold.
    Moderate,
    /// A copy of another row.
    Duplicate,
}

const KINDS: [Replacement; 5] = [
    Replacement::Same,
    Replacement::Fresh,
    Replacement::Far,
    Replacement::Moderate,
    Replacement::Duplicate,
];

struct Population {
    mu: Vec<f64>,
    root: Matrix,
    scale: f64,
}

impl Population {
    fn draw(rng: &mut RngStream, d: usize) -> Self {
        let var = rng.uniform(0.5, 50.0).powi(2);
        let (cov, root) = random_covariance(rng, d, 100.0, var);
        let scale = spectral_decomp(&cov).map(|s| s.max_eig().sqrt()).unwrap_or(1.0);
        Population {
            mu: random_mean(rng, d, 1e3),
            root,
            scale,
        }
    }

    /// `μ + √c · Σ^{1/2} u` with `u` uniform on the sphere.
    fn at_radius(&self, rng: &mut RngStream, c: f64) -> Vec<f64> {
        let u = Vector::from_vec(unit_sphere(rng, self.mu.len()));
        let v = &self.root * u;
        self.mu.iter().zip(v.iter()).map(|(m, e)| m + c.sqrt() * e).collect()
    }

    fn replacement(&self, kind: Replacement, x: &Dataset, row: usize, lambda0: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(match kind {
            Replacement::Same => x.row(row).to_vec(),
            Replacement::Fresh => gaussian_vector(rng, &self.mu, &self.root)?,
            Replacement::Far => {
                let u = unit_sphere(rng, self.mu.len());
                self.mu.iter().zip(&u).map(|(m, e)| m + 1e6 * self.scale * e).collect()
            }
            Replacement::Moderate => {
                let c = rng.uniform(0.25, 4.0) * lambda0;
                self.at_radius(rng, c)
            }
            Replacement::Duplicate => x.row(rng.below(x.n())).to_vec(),
        })
    }
}

fn pipeline(x: &Dataset, plan: &SamplerPlan, r: &[usize]) -> Result<(WeightedCovOutput, WeightVectorOutput)> {
    let cfg = plan.estimator();
    let mean_block = x.slice(0, plan.n1);
    let y = pair_and_rescale(&x.slice(plan.n1, plan.n))?;
    let cov = stable_cov_paired(&y, &cfg)?;
    let mean = stable_mean(&mean_block, &cov.sigma_hat, &cfg, r)?;
    Ok((cov, mean))
}

fn hypothesis_notes(report: &mut AuditReport, plans: &[SamplerPlan]) {
    for p in plans {
        let unmet = p.unmet_stability_hypotheses();
        if !unmet.is_empty() {
            report.note(format!("d={}: unmet size hypotheses: {}", p.d, unmet.join(", ")));
        }
    }
    if plans.iter().any(|p| matches!(p.mode, crate::privacy::PlanMode::Relaxed { .. })) {
        report.note("relaxed sizing: k is fixed, not derived from (epsilon, delta)");
    }
}

struct SensitivityTrial {
    diff: usize,
    max_score: usize,
    identical: bool,
}

/// `|max(Score₁, Score₂) − max(Score₁′, Score₂′)| ≤ 2` on adjacent pairs
/// with a shared reference set. Datasets are Gaussian with a random number
/// of planted outliers so that scores away from 0 are exercised.
pub fn audit_score_sensitivity(trials: usize, plans: &[SamplerPlan], base: &RngStream) -> Result<AuditReport> {
    let rows = par_trials(trials, base, |t, rng| {
        let plan = &plans[t % plans.len()];
        let pop = Population::draw(rng, plan.d);
        let mut x = Dataset::gaussian_with_root(rng, plan.n, &pop.mu, &pop.root)?;
        let planted = rng.below(plan.k + 3);
        for _ in 0..planted {
            let i = rng.below(plan.n);
            let c = rng.uniform(0.5, 8.0) * plan.lambda0;
            let v = pop.at_radius(rng, c);
            x.set_row(i, &v);
        }
        let kind = KINDS[(t / plans.len()) % KINDS.len()];
        let row = rng.below(plan.n);
        let replacement = pop.replacement(kind, &x, row, plan.lambda0, rng)?;
        let pair = AdjacentPair {
            base: x,
            changed_row: row,
            replacement,
        };
        let r = uniform_subset(rng, plan.n1, plan.m)?;
        let (c1, m1) = pipeline(&pair.base, plan, &r)?;
        let (c2, m2) = pipeline(&pair.changed(), plan, &r)?;
        let s1 = c1.score.max(m1.score);
        let s2 = c2.score.max(m2.score);
        Ok(SensitivityTrial {
            diff: s1.abs_diff(s2),
            max_score: s1.max(s2),
            identical: kind == Replacement::Same,
        })
    })?;
    let mut report = AuditReport::new("score_sensitivity", base.seed(), &mode_label(plans));
    report.trials = trials;
    report.failures = rows.iter().filter(|r| r.diff > 2 || (r.identical && r.diff != 0)).count();
    report.stat("max_abs_score_diff", rows.iter().map(|r| r.diff).max().unwrap_or(0) as f64);
    report.stat("bound", 2.0);
    report.stat("trials_with_positive_score", rows.iter().filter(|r| r.max_score > 0).count() as f64);
    report.stat("max_score_seen", rows.iter().map(|r| r.max_score).max().unwrap_or(0) as f64);
    hypothesis_notes(&mut report, plans);
    report.verdict = Verdict::from_bool(report.failures == 0);
    Ok(report)
}

struct CovTrial {
    qualifying: bool,
    failed: bool,
    trace_ratio: f64,
}

/// Tolerance on the trace-norm comparison, matching the PSD slack.
const TRACE_SLACK: f64 = 1e-9;

/// Minimum share of Gaussian trials on which both scores are below `k`.
pub const COV_MIN_QUALIFYING: f64 = 0.75;

/// On adjacent covariance blocks with both scores `< k`: `Σ₁, Σ₂ ≻ 0`,
/// `(1−γ)Σ₁ ⪯ Σ₂ ⪯ Σ₁/(1−γ)` and both relative trace norms at most
/// `(1+2γ)γ`.
pub fn audit_cov_stability(trials: usize, plans: &[SamplerPlan], base: &RngStream) -> Result<AuditReport> {
    let rows = par_trials(trials, base, |t, rng| {
        let plan = &plans[t % plans.len()];
        let cfg = plan.estimator();
        let gamma = plan.gamma();
        let pop = Population::draw(rng, plan.d);
        let x = Dataset::gaussian_with_root(rng, 2 * plan.n2, &pop.mu, &pop.root)?;
        let kind = KINDS[(t / plans.len()) % KINDS.len()];
        let row = rng.below(x.n());
        let replacement = pop.replacement(kind, &x, row, plan.lambda0, rng)?;
        let pair = AdjacentPair {
            base: x,
            changed_row: row,
            replacement,
        };
        let a = stable_cov(&pair.base, &cfg)?;
        let b = stable_cov(&pair.changed(), &cfg)?;
        if a.score >= plan.k || b.score >= plan.k {
            return Ok(CovTrial {
                qualifying: false,
                failed: false,
                trace_ratio: 0.0,
            });
        }
        let s1 = &a.sigma_hat;
        let s2 = &b.sigma_hat;
        let pd = spectral_decomp(s1)?.min_eig() > 0.0 && spectral_decomp(s2)?.min_eig() > 0.0;
        if !pd {
            return Ok(CovTrial {
                qualifying: true,
                failed: true,
                trace_ratio: f64::INFINITY,
            });
        }
        let sandwich = psd_sandwich_check(s1, s2, gamma)?;
        let bound = (1.0 + 2.0 * gamma) * gamma;
        let t12 = relative_tracenorm(s1, s2)?;
        let t21 = relative_tracenorm(s2, s1)?;
        let same_ok = kind != Replacement::Same || s1 == s2;
        Ok(CovTrial {
            qualifying: true,
            failed: !(sandwich && t12 <= bound + TRACE_SLACK && t21 <= bound + TRACE_SLACK && same_ok),
            trace_ratio: t12.max(t21) / bound,
        })
    })?;
    let mut report = AuditReport::new("cov_stability", base.seed(), &mode_label(plans));
    report.trials = trials;
    let qualifying = rows.iter().filter(|r| r.qualifying).count();
    report.failures = rows.iter().filter(|r| r.failed).count();
    report.stat("qualifying_trials", qualifying as f64);
    report.stat("non_qualifying_trials", (trials - qualifying) as f64);
    report.stat(
        "max_tracenorm_over_bound",
        rows.iter().filter(|r| r.qualifying).map(|r| r.trace_ratio).fold(0.0, f64::max),
    );
    for p in plans {
        report.stat(&format!("gamma_d{}", p.d), p.gamma());
    }
    hypothesis_notes(&mut report, plans);
    let enough = qualifying as f64 >= COV_MIN_QUALIFYING * trials as f64;
    if !enough {
        report.note(format!("only {qualifying} of {trials} trials qualified"));
    }
    report.verdict = Verdict::from_bool(report.failures == 0 && enough);
    Ok(report)
}

struct MeanTrial {
    qualifying: bool,
    failed: bool,
    ratio: f64,
    representative: bool,
}

/// `Σ₁^{1/2} V D Vᵀ Σ₁^{1/2}` with `D` on the sandwich boundary
/// `{1−γ, 1/(1−γ)}` in random directions.
fn extreme_sandwich(rng: &mut RngStream, s1: &Matrix, gamma: f64) -> Result<Matrix> {
    let d = s1.nrows();
    let h = sym_sqrt(s1)?;
    let v = random_rotation(rng, d);
    let diag = Matrix::from_diagonal(&Vector::from_fn(d, |_, _| {
        if rng.below(2) == 0 {
            1.0 - gamma
        } else {
            1.0 / (1.0 - gamma)
        }
    }));
    let m = &h * &v * diag * v.transpose() * &h;
    Ok(0.5 * (&m + m.transpose()))
}

/// `‖μ̂ − μ̂′‖²_{Σ₁} ≤ (1+2γ)·38e²λ₀/n₁²` on trials where both mean scores
/// are `< k` and the shared reference set is degree-representative for both
/// blocks. Trials rotate through: a changed mean row with a shared metric, a
/// changed covariance row (so the metrics come from two adjacent covariance
/// runs), and a changed mean row with the second metric on the sandwich
/// boundary.
pub fn audit_mean_stability(trials: usize, plans: &[SamplerPlan], base: &RngStream) -> Result<AuditReport> {
    let rows = par_trials(trials, base, |t, rng| {
        let plan = &plans[t % plans.len()];
        let cfg = plan.estimator();
        let gamma = plan.gamma();
        let pop = Population::draw(rng, plan.d);
        let x = Dataset::gaussian_with_root(rng, plan.n, &pop.mu, &pop.root)?;
        let mean_a = x.slice(0, plan.n1);
        let cov_block = x.slice(plan.n1, plan.n);
        let cov_a = stable_cov(&cov_block, &cfg)?;
        let r = uniform_subset(rng, plan.n1, plan.m)?;
        let variant = (t / plans.len()) % 3;
        let kind = [Replacement::Fresh, Replacement::Far, Replacement::Moderate, Replacement::Same]
            [(t / (3 * plans.len())) % 4];
        let not_qualifying = MeanTrial {
            qualifying: false,
            failed: false,
            ratio: 0.0,
            representative: false,
        };
        if cov_a.score >= plan.k {
            return Ok(not_qualifying);
        }
        let s1 = cov_a.sigma_hat.clone();
        let (mean_b, s2) = match variant {
            0 | 2 => {
                let row = rng.below(plan.n1);
                let rep = pop.replacement(kind, &mean_a, row, plan.lambda0, rng)?;
                let pair = AdjacentPair {
                    base: mean_a.clone(),
                    changed_row: row,
                    replacement: rep,
                };
                let s2 = if variant == 0 { s1.clone() } else { extreme_sandwich(rng, &s1, gamma)? };
                (pair.changed(), s2)
            }
            _ => {
                let row = rng.below(cov_block.n());
                let rep = pop.replacement(kind, &cov_block, row, plan.lambda0, rng)?;
                let pair = AdjacentPair {
                    base: cov_block.clone(),
                    changed_row: row,
                    replacement: rep,
                };
                let cov_b = stable_cov(&pair.changed(), &cfg)?;
                if cov_b.score >= plan.k || !psd_sandwich_check(&s1, &cov_b.sigma_hat, gamma)? {
                    return Ok(not_qualifying);
                }
                (mean_a.clone(), cov_b.sigma_hat)
            }
        };
        let va = stable_mean(&mean_a, &s1, &cfg, &r)?;
        let vb = stable_mean(&mean_b, &s2, &cfg, &r)?;
        if va.score >= plan.k || vb.score >= plan.k {
            return Ok(not_qualifying);
        }
        let cap = E2 * plan.lambda0;
        let representative =
            degree_representative(&mean_a, &s1, cap, &r)? && degree_representative(&mean_b, &s2, cap, &r)?;
        if !representative {
            return Ok(MeanTrial {
                representative: false,
                ..not_qualifying
            });
        }
        let ma = mean_a.weighted_sum(&va.weights);
        let mb = mean_b.weighted_sum(&vb.weights);
        let diff: Vec<f64> = ma.iter().zip(&mb).map(|(a, b)| a - b).collect();
        let dist = mahalanobis_sq(&diff, &s1)?;
        let n1 = plan.n1 as f64;
        let bound = (1.0 + 2.0 * gamma) * 38.0 * E2 * plan.lambda0 / (n1 * n1);
        Ok(MeanTrial {
            qualifying: true,
            failed: dist > bound * (1.0 + 1e-9),
            ratio: dist / bound,
            representative: true,
        })
    })?;
    let mut report = AuditReport::new("mean_stability", base.seed(), &mode_label(plans));
    report.trials = trials;
    let qualifying = rows.iter().filter(|r| r.qualifying).count();
    report.failures = rows.iter().filter(|r| r.failed).count();
    report.stat("qualifying_trials", qualifying as f64);
    report.stat("non_qualifying_trials", (trials - qualifying) as f64);
    report.stat(
        "representative_trials",
        rows.iter().filter(|r| r.representative).count() as f64,
    );
    report.stat(
        "max_ratio_observed_over_bound",
        rows.iter().filter(|r| r.qualifying).map(|r| r.ratio).fold(0.0, f64::max),
    );
    hypothesis_notes(&mut report, plans);
    let enough = qualifying as f64 >= COV_MIN_QUALIFYING * trials as f64;
    if !enough {
        report.note(format!("only {qualifying} of {trials} trials qualified"));
    }
    report.verdict = Verdict::from_bool(report.failures == 0 && enough);
    Ok(report)
}
