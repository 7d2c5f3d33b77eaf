//! Utility audits: the good-data event and end-to-end closeness of the
//! sampler's output law to the data distribution.

use crate::data::Dataset;
use crate::divergences::{hockey_stick_discrete, tv_histogram, Bins};
use crate::error::{Error, Result};
use crate::linalg::{spectral_decomp, sym_inverse, sym_sqrt, Matrix, Whitener};
use crate::privacy::{plan_with, PlanConfig, PrivacyParams, SamplerPlan};
use crate::rng::RngStream;
use crate::samplers::{run_unbounded, PreparedUnbounded};

use super::{mode_label, par_trials, random_covariance, random_mean, AuditReport, Verdict};

/// One population for the utility-event audit.
#[derive(Debug, Clone)]
pub struct UtilitySetting {
    pub label: String,
    pub plan: SamplerPlan,
    /// Fixed `(μ, Σ)`; when absent each trial draws a random population.
    pub population: Option<(Vec<f64>, Matrix)>,
}

impl UtilitySetting {
    /// Standard plans at `d ∈ {1, 2, 4}` with random populations, plus a
    /// badly scaled fixed population at `d = 2`.
    pub fn defaults(alpha: f64, params: PrivacyParams) -> Result<Vec<UtilitySetting>> {
        let mut out = Vec::new();
        for d in [1usize, 2, 4] {
            out.push(UtilitySetting {
                label: format!("d{d}"),
                plan: plan_with(&PlanConfig::new(alpha, params, d))?,
                population: None,
            });
        }
        let cov = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 100.0]));
        out.push(UtilitySetting {
            label: "diag_1_100".into(),
            plan: plan_with(&PlanConfig::new(alpha, params, 2))?,
            population: Some((vec![1e6, -3e5], cov)),
        });
        Ok(out)
    }
}

struct EventTrial {
    e: bool,
    success: bool,
}

/// `E₁ ∩ E₂ ∩ E₃` evaluated directly from the data and the true `(μ, Σ)`.
fn good_event(x: &Dataset, plan: &SamplerPlan, mu: &[f64], sigma: &Matrix) -> Result<bool> {
    let wh = Whitener::new(sigma)?;
    let cap = plan.lambda0 / 4.0;
    let d = plan.d;
    let mut centered = vec![0.0; d];
    for i in 0..plan.n1 {
        for (c, (a, m)) in centered.iter_mut().zip(x.row(i).iter().zip(mu)) {
            *c = a - m;
        }
        if wh.norm_sq(&centered) > cap {
            return Ok(false);
        }
    }
    let m = plan.n2;
    let mut ys = Vec::with_capacity(m);
    for i in 0..m {
        let a = x.row(plan.n1 + i);
        let b = x.row(plan.n1 + m + i);
        let y: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q) / std::f64::consts::SQRT_2).collect();
        if wh.norm_sq(&y) > cap {
            return Ok(false);
        }
        ys.push(y);
    }
    let mut bar = Matrix::zeros(d, d);
    for y in &ys {
        for p in 0..d {
            for q in 0..d {
                bar[(p, q)] += y[p] * y[q] / m as f64;
            }
        }
    }
    let Ok(bar_inv) = sym_inverse(&bar) else {
        return Ok(false);
    };
    let h = sym_sqrt(sigma)?;
    let c = &h * bar_inv * &h;
    let dev = spectral_decomp(&(0.5 * (&c + c.transpose())))?
        .eigvals
        .iter()
        .map(|l| (l - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(dev <= 2.0)
}

/// On Gaussian data: `E` implies uniform weights, both scores 0 and a
/// passing gate, on every trial; and the empirical rate of that outcome is
/// at least `1 − α − 0.05`.
pub fn audit_utility_events(trials: usize, settings: &[UtilitySetting], base: &RngStream) -> Result<AuditReport> {
    let plans: Vec<SamplerPlan> = settings.iter().map(|s| s.plan).collect();
    let mut report = AuditReport::new("utility_events", base.seed(), &mode_label(&plans));
    let mut all_rates_ok = true;
    for (si, setting) in settings.iter().enumerate() {
        let plan = &setting.plan;
        let stream = base.derive(si as u64);
        let rows = par_trials(trials, &stream, |_, rng| {
            let (mu, sigma) = match &setting.population {
                Some(p) => p.clone(),
                None => {
                    let (cov, _) = random_covariance(rng, plan.d, 100.0, 1.0);
                    (random_mean(rng, plan.d, 1e4), cov)
                }
            };
            let root = sym_sqrt(&sigma)?;
            let x = Dataset::gaussian_with_root(rng, plan.n, &mu, &root)?;
            let e = good_event(&x, plan, &mu, &sigma)?;
            let run = run_unbounded(&x, plan, rng)?;
            let success = run.cov.uniform()
                && run.mean.uniform()
                && run.cov.score == 0
                && run.mean.score == 0
                && !run.result.is_fail();
            Ok(EventTrial { e, success })
        })?;
        let n = trials as f64;
        let e_rate = rows.iter().filter(|r| r.e).count() as f64 / n;
        let s_rate = rows.iter().filter(|r| r.success).count() as f64 / n;
        let violations = rows.iter().filter(|r| r.e && !r.success).count();
        report.failures += violations;
        report.trials += trials;
        let floor = 1.0 - plan.alpha - 0.05;
        let l = &setting.label;
        report.stat(&format!("{l}_pr_event"), e_rate);
        report.stat(&format!("{l}_pr_uniform_and_scores_zero"), s_rate);
        report.stat(&format!("{l}_required_rate"), floor);
        report.stat(&format!("{l}_implication_violations"), violations as f64);
        report.stat(&format!("{l}_lambda0"), plan.lambda0);
        report.stat(&format!("{l}_n"), plan.n as f64);
        if s_rate < floor {
            all_rates_ok = false;
            report.note(format!("{l}: success rate {s_rate} below {floor}"));
        }
    }
    report.verdict = Verdict::from_bool(report.failures == 0 && all_rates_ok);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct EndToEndSpec {
    /// Must be one-dimensional.
    pub plan: SamplerPlan,
    /// `(μ, σ)` pairs; trial data is `μ + σ·g` with shared `g`, so the
    /// settings witness affine equivariance draw for draw.
    pub settings: Vec<(f64, f64)>,
    pub smoke_runs: usize,
    /// Minimum non-Fail outputs before the TV comparison is attempted.
    pub min_outputs: usize,
    /// Feed constant data (every row equal to `μ`), which always fails.
    pub constant_data: bool,
}

impl EndToEndSpec {
    pub fn defaults(alpha: f64, params: PrivacyParams) -> Result<Self> {
        Ok(EndToEndSpec {
            plan: plan_with(&PlanConfig::new(alpha, params, 1))?,
            settings: vec![(0.0, 1.0), (1e6, 100.0)],
            smoke_runs: 100_000,
            min_outputs: 1000,
            constant_data: false,
        })
    }
}

/// (a) Histogram TV between sampler outputs (fresh data each run) and fresh
/// population draws, held to `α + 3σ_boot`. (b) An informational
/// hockey-stick estimate between the output laws on one adjacent pair.
pub fn audit_end_to_end(spec: &EndToEndSpec, trials: usize, base: &RngStream) -> Result<AuditReport> {
    let plan = &spec.plan;
    if plan.d != 1 {
        return Err(Error::InvalidParams("end-to-end audit runs at d = 1".into()));
    }
    let mut report = AuditReport::new("end_to_end", base.seed(), &mode_label(std::slice::from_ref(plan)));
    report.trials = trials;
    let k = spec.settings.len();
    let outputs = par_trials(trials, &base.derive(0), |_, rng| {
        let g = rng.normals(plan.n);
        let alg = rng.derive(1);
        let mut out = Vec::with_capacity(k);
        for &(mu, sd) in &spec.settings {
            let vals: Vec<f64> = if spec.constant_data {
                vec![mu; plan.n]
            } else {
                g.iter().map(|v| mu + sd * v).collect()
            };
            let x = Dataset::new(plan.n, 1, vals)?;
            let run = run_unbounded(&x, plan, &mut alg.clone())?;
            out.push(run.result.value().map(|z| z[0]));
        }
        Ok(out)
    })?;
    let mut truth_rng = base.derive(1);
    let truth_g = truth_rng.normals(trials);
    let mut boot = base.derive(2);
    let mut ok = true;
    for (si, &(mu, sd)) in spec.settings.iter().enumerate() {
        let z: Vec<Vec<f64>> = outputs.iter().filter_map(|o| o[si]).map(|v| vec![v]).collect();
        let fail_frac = 1.0 - z.len() as f64 / trials as f64;
        report.stat(&format!("setting{si}_fail_fraction"), fail_frac);
        if z.len() < spec.min_outputs {
            report.note(format!("setting {si}: insufficient non-Fail outputs ({})", z.len()));
            ok = false;
            continue;
        }
        let truth: Vec<Vec<f64>> = truth_g.iter().map(|v| vec![mu + sd * v]).collect();
        let est = tv_histogram(&z, &truth, Bins::Auto, &mut boot)?;
        let limit = plan.alpha + 3.0 * est.boot_sigma;
        report.stat(&format!("setting{si}_tv"), est.tv);
        report.stat(&format!("setting{si}_boot_sigma"), est.boot_sigma);
        report.stat(&format!("setting{si}_tv_limit"), limit);
        if est.tv > limit {
            ok = false;
            report.failures += 1;
        }
    }
    if k >= 2 && !spec.constant_data {
        // Outputs of later settings should be the affine image of the first.
        let (m0, s0) = spec.settings[0];
        let mut worst: f64 = 0.0;
        let mut mismatched = 0usize;
        for o in &outputs {
            for (si, &(mu, sd)) in spec.settings.iter().enumerate().skip(1) {
                match (o[0], o[si]) {
                    (Some(a), Some(b)) => {
                        let expect = mu + sd * (a - m0) / s0;
                        worst = worst.max((b - expect).abs() / sd);
                    }
                    (None, None) => {}
                    _ => mismatched += 1,
                }
            }
        }
        report.stat("equivariance_max_rel_error", worst);
        report.stat("equivariance_outcome_mismatches", mismatched as f64);
    }
    report.stat("alpha", plan.alpha);
    report.stat("n", plan.n as f64);

    if spec.smoke_runs > 0 && !spec.constant_data {
        privacy_smoke(spec, base, &mut report)?;
    }
    report.verdict = Verdict::from_bool(ok);
    Ok(report)
}

/// Histogram of outputs over fixed edges with a trailing atom for Fail.
fn binned(outputs: &[Option<f64>], lo: f64, width: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins + 1];
    for o in outputs {
        let b = match o {
            None => bins,
            Some(v) if width > 0.0 => (((v - lo) / width) as usize).min(bins - 1),
            Some(_) => 0,
        };
        h[b] += 1.0;
    }
    let n = outputs.len() as f64;
    h.iter().map(|c| c / n).collect()
}

fn privacy_smoke(spec: &EndToEndSpec, base: &RngStream, report: &mut AuditReport) -> Result<()> {
    let plan = &spec.plan;
    let (mu, sd) = spec.settings[0];
    let mut data_rng = base.derive(3);
    let x = Dataset::new(plan.n, 1, data_rng.normals(plan.n).iter().map(|v| mu + sd * v).collect())?;
    let mut x2 = x.clone();
    // A moderately outlying row in the covariance block moves both the
    // spread and, through the metric, the mean weights.
    x2.set_row(plan.n1, &[mu + 10.0 * sd]);
    let p = PreparedUnbounded::new(&x, plan)?;
    let q = PreparedUnbounded::new(&x2, plan)?;
    let runs = spec.smoke_runs;
    let draws = par_trials(runs, &base.derive(4), |_, rng| {
        let a = p.release(&mut rng.clone())?.result;
        let b = q.release(rng)?.result;
        Ok((a.value().map(|z| z[0]), b.value().map(|z| z[0])))
    })?;
    let pa: Vec<Option<f64>> = draws.iter().map(|d| d.0).collect();
    let pb: Vec<Option<f64>> = draws.iter().map(|d| d.1).collect();
    let vals: Vec<f64> = pa.iter().chain(&pb).filter_map(|v| *v).collect();
    let eps = plan.epsilon;
    let (hpq, hqp) = if vals.is_empty() {
        (0.0, 0.0)
    } else {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bins = ((2 * runs) as f64).cbrt().ceil() as usize;
        let width = (hi - lo) / bins as f64;
        let ha = binned(&pa, lo, width, bins);
        let hb = binned(&pb, lo, width, bins);
        (hockey_stick_discrete(&ha, &hb, eps)?, hockey_stick_discrete(&hb, &ha, eps)?)
    };
    let fail = |v: &[Option<f64>]| v.iter().filter(|o| o.is_none()).count() as f64 / v.len() as f64;
    report.stat("smoke_hockey_stick_pq", hpq);
    report.stat("smoke_hockey_stick_qp", hqp);
    report.stat("smoke_fail_fraction_p", fail(&pa));
    report.stat("smoke_fail_fraction_q", fail(&pb));
    report.stat("smoke_runs", runs as f64);
    report.note(
        "privacy smoke test is informational: binned estimates are biased and cannot certify small delta",
    );
    Ok(())
}
