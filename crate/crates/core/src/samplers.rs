//! Top-level private algorithms: the unbounded Gaussian sampler, the
//! covariance-aware mean estimator and the known-covariance sampler.
//!
//! Random bits are consumed in a fixed order (reference set, gate noise,
//! output noise) so that runs on adjacent datasets sharing a stream are
//! coupled draw for draw.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt, Matrix, Vector};
use crate::privacy::{
    c_sq_for, k_for, ptr_check_with, reference_size_for, LogBase, PrivacyParams, PtrOutcome,
    PtrRule, SamplerPlan,
};
use crate::rng::{unit_sphere, uniform_subset, RngStream};
use crate::stable::{
    mean_weights_from_degrees, pair_and_rescale, stable_cov_paired, stable_mean, EstimatorConfig,
    NeighborGraph, WeightVectorOutput, WeightedCovOutput, E2,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum SampleResult {
    Ok { z: Vec<f64> },
    Fail,
}

impl SampleResult {
    pub fn value(&self) -> Option<&[f64]> {
        match self {
            SampleResult::Ok { z } => Some(z),
            SampleResult::Fail => None,
        }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, SampleResult::Fail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    /// Absent for the known-covariance sampler, which skips the covariance
    /// estimator.
    pub score1: Option<usize>,
    pub score2: usize,
    pub ptr_outcome: PtrOutcome,
    pub cov_uniform: Option<bool>,
    pub mean_uniform: bool,
    pub reference_set: Vec<usize>,
    pub plan: Option<SamplerPlan>,
}

impl RunTrace {
    pub fn max_score(&self) -> usize {
        self.score1.unwrap_or(0).max(self.score2)
    }
}

/// Everything a run computes before touching randomness, plus the
/// randomized tail. Exposed so that audits can inspect intermediate
/// quantities of adjacent runs.
#[derive(Debug, Clone)]
pub struct UnboundedRun {
    pub cov: WeightedCovOutput,
    pub mean: WeightVectorOutput,
    pub mu_hat: Vec<f64>,
    pub result: SampleResult,
    pub trace: RunTrace,
}

fn check_shape(x: &Dataset, rows: usize, cols: usize) -> Result<()> {
    if x.n() != rows || x.d() != cols {
        return Err(Error::ShapeMismatch {
            rows,
            cols,
            got_rows: x.n(),
            got_cols: x.d(),
        });
    }
    Ok(())
}

/// `μ̂ + scale · W z`
fn sphere_output(mu_hat: &[f64], w: &Matrix, scale: f64, rng: &mut RngStream) -> Vec<f64> {
    let z = Vector::from_vec(unit_sphere(rng, w.ncols()));
    let wz = w * z;
    mu_hat.iter().zip(wz.iter()).map(|(m, e)| m + scale * e).collect()
}

pub fn sample_unbounded(x: &Dataset, plan: &SamplerPlan, rng: &mut RngStream) -> Result<(SampleResult, RunTrace)> {
    let run = run_unbounded(x, plan, rng)?;
    Ok((run.result, run.trace))
}

pub fn run_unbounded(x: &Dataset, plan: &SamplerPlan, rng: &mut RngStream) -> Result<UnboundedRun> {
    check_shape(x, plan.n, plan.d)?;
    let cfg = plan.estimator();
    cfg.validate()?;
    let mean_block = x.slice(0, plan.n1);
    let y = pair_and_rescale(&x.slice(plan.n1, plan.n))?;
    let cov = stable_cov_paired(&y, &cfg)?;
    let r = uniform_subset(rng, plan.n1, plan.m)?;
    let mean = stable_mean(&mean_block, &cov.sigma_hat, &cfg, &r)?;
    Ok(finish_unbounded(plan, &mean_block, cov, mean, r, rng))
}

fn finish_unbounded(
    plan: &SamplerPlan,
    mean_block: &Dataset,
    cov: WeightedCovOutput,
    mean: WeightVectorOutput,
    r: Vec<usize>,
    rng: &mut RngStream,
) -> UnboundedRun {
    let mu_hat = mean_block.weighted_sum(&mean.weights);
    let score = cov.score.max(mean.score);
    let outcome = ptr_check_with(plan.ptr_rule, score as f64, &plan.ptr_params(), rng);
    let result = match outcome {
        PtrOutcome::Fail => SampleResult::Fail,
        PtrOutcome::Pass => {
            let scale = ((1.0 - 1.0 / plan.n1 as f64) * plan.n2 as f64).sqrt();
            SampleResult::Ok {
                z: sphere_output(&mu_hat, &cov.w, scale, rng),
            }
        }
    };
    let trace = RunTrace {
        score1: Some(cov.score),
        score2: mean.score,
        ptr_outcome: outcome,
        cov_uniform: Some(cov.uniform()),
        mean_uniform: mean.uniform(),
        reference_set: r,
        plan: Some(*plan),
    };
    UnboundedRun {
        cov,
        mean,
        mu_hat,
        result,
        trace,
    }
}

/// The deterministic part of `sample_unbounded` for a fixed dataset,
/// precomputed once so that many releases on the same data only pay for
/// the randomized steps. Each release is identical to `sample_unbounded`
/// with the same stream.
#[derive(Debug, Clone)]
pub struct PreparedUnbounded {
    plan: SamplerPlan,
    mean_block: Dataset,
    cov: WeightedCovOutput,
    graph: NeighborGraph,
}

impl PreparedUnbounded {
    pub fn new(x: &Dataset, plan: &SamplerPlan) -> Result<Self> {
        check_shape(x, plan.n, plan.d)?;
        let cfg = plan.estimator();
        cfg.validate()?;
        let mean_block = x.slice(0, plan.n1);
        let y = pair_and_rescale(&x.slice(plan.n1, plan.n))?;
        let cov = stable_cov_paired(&y, &cfg)?;
        let graph = NeighborGraph::new(&mean_block, &cov.sigma_hat, cfg.lambda_core())?;
        Ok(PreparedUnbounded {
            plan: *plan,
            mean_block,
            cov,
            graph,
        })
    }

    pub fn cov(&self) -> &WeightedCovOutput {
        &self.cov
    }

    pub fn release(&self, rng: &mut RngStream) -> Result<UnboundedRun> {
        let r = uniform_subset(rng, self.plan.n1, self.plan.m)?;
        let deg = self.graph.degrees(&r)?;
        let mean = mean_weights_from_degrees(&deg, r.len(), self.plan.k);
        Ok(finish_unbounded(&self.plan, &self.mean_block, self.cov.clone(), mean, r, rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovAwareOptions {
    /// Run the covariance estimator on rows `≥ n₁` and the mean estimator
    /// on rows `< n₁` instead of both on the full dataset.
    pub split_at: Option<usize>,
    pub ptr_rule: PtrRule,
    pub core_factor: f64,
    pub log_base: LogBase,
}

impl Default for CovAwareOptions {
    fn default() -> Self {
        CovAwareOptions {
            split_at: None,
            ptr_rule: PtrRule::Threshold,
            core_factor: E2,
            log_base: LogBase::Natural,
        }
    }
}

pub fn cov_aware_mean(
    x: &Dataset,
    params: &PrivacyParams,
    lambda0: f64,
    rng: &mut RngStream,
) -> Result<(SampleResult, RunTrace)> {
    cov_aware_mean_with(x, params, lambda0, &CovAwareOptions::default(), rng)
}

pub fn cov_aware_mean_with(
    x: &Dataset,
    params: &PrivacyParams,
    lambda0: f64,
    opts: &CovAwareOptions,
    rng: &mut RngStream,
) -> Result<(SampleResult, RunTrace)> {
    let p = PrivacyParams::new(params.epsilon, params.delta)?;
    let n = x.n();
    let k = k_for(&p, opts.log_base);
    let cfg = EstimatorConfig {
        lambda0,
        k,
        core_factor: opts.core_factor,
    };
    cfg.validate()?;
    let (mean_block, cov_block) = match opts.split_at {
        Some(n1) => {
            if n1 == 0 || n1 >= n {
                return Err(Error::InvalidParams(format!("split point {n1} outside 1..{n}")));
            }
            (x.slice(0, n1), x.slice(n1, n))
        }
        None => (x.clone(), x.slice(0, 2 * (n / 2))),
    };
    let m = reference_size_for(k, n, &p, opts.log_base);
    if m > mean_block.n() {
        return Err(Error::InvalidParams(format!(
            "reference set of size {m} needs at least that many rows, got {}",
            mean_block.n()
        )));
    }
    let cov = stable_cov_paired(&pair_and_rescale(&cov_block)?, &cfg)?;
    let r = uniform_subset(rng, mean_block.n(), m)?;
    let mean = stable_mean(&mean_block, &cov.sigma_hat, &cfg, &r)?;
    let mu_hat = mean_block.weighted_sum(&mean.weights);
    let score = cov.score.max(mean.score);
    let outcome = ptr_check_with(opts.ptr_rule, score as f64, &p.split(3.0, 6.0), rng);
    let result = match outcome {
        PtrOutcome::Fail => SampleResult::Fail,
        PtrOutcome::Pass => {
            let c = c_sq_for(lambda0, n, &p, opts.log_base).sqrt();
            let root = sym_sqrt(&cov.sigma_hat)? * c;
            SampleResult::Ok {
                z: crate::rng::gaussian_vector(rng, &mu_hat, &root)?,
            }
        }
    };
    let trace = RunTrace {
        score1: Some(cov.score),
        score2: mean.score,
        ptr_outcome: outcome,
        cov_uniform: Some(cov.uniform()),
        mean_uniform: mean.uniform(),
        reference_set: r,
        plan: None,
    };
    Ok((result, trace))
}

/// Sampler for data known to have identity covariance: only the mean
/// estimator runs, and the output adds `√(1 − 1/n₁)` times standard normal
/// noise to the stable mean.
pub fn sample_known_cov(x: &Dataset, plan: &SamplerPlan, rng: &mut RngStream) -> Result<(SampleResult, RunTrace)> {
    check_shape(x, plan.n1, plan.d)?;
    let cfg = plan.estimator();
    cfg.validate()?;
    let eye = Matrix::identity(plan.d, plan.d);
    let r = uniform_subset(rng, plan.n1, plan.m)?;
    let mean = stable_mean(x, &eye, &cfg, &r)?;
    let mu_hat = x.weighted_sum(&mean.weights);
    let outcome = ptr_check_with(plan.ptr_rule, mean.score as f64, &plan.ptr_params(), rng);
    let result = match outcome {
        PtrOutcome::Fail => SampleResult::Fail,
        PtrOutcome::Pass => {
            let s = (1.0 - 1.0 / plan.n1 as f64).sqrt();
            let g = rng.normals(plan.d);
            SampleResult::Ok {
                z: mu_hat.iter().zip(&g).map(|(m, e)| m + s * e).collect(),
            }
        }
    };
    let trace = RunTrace {
        score1: None,
        score2: mean.score,
        ptr_outcome: outcome,
        cov_uniform: None,
        mean_uniform: mean.uniform(),
        reference_set: r,
        plan: Some(*plan),
    };
    Ok((result, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::{plan, PlanMode};

    fn std_plan(d: usize) -> SamplerPlan {
        plan(0.2, PrivacyParams::new(1.0, 0.1).unwrap(), d, 1.0, 1.0).unwrap()
    }

    #[test]
    fn shape_guard() {
        let p = std_plan(1);
        let x = Dataset::new(p.n - 1, 1, vec![0.0; p.n - 1]).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            sample_unbounded(&x, &p, &mut rng),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_covariance_block_fails() {
        let p = std_plan(2);
        let mut rng = RngStream::new(4, 0);
        let mut x = Dataset::gaussian(&mut rng, p.n, &[0.0, 0.0], &Matrix::identity(2, 2)).unwrap();
        for i in p.n1..p.n {
            x.set_row(i, &[1.0, 1.0]);
        }
        for s in 0..50 {
            let (res, trace) = sample_unbounded(&x, &p, &mut RngStream::new(s, 1)).unwrap();
            assert_eq!(trace.score1, Some(p.k));
            assert!(res.is_fail());
        }
    }

    #[test]
    fn whitened_pairs_and_constant_mean_block() {
        // Covariance block (e₁,…, −e₁,…) gives Yᵢ = √2 eᵢ-type pairs whose
        // second moment is well conditioned; the mean block is constant.
        let p = std_plan(2);
        let mut rows = vec![vec![3.0, -1.0]; p.n1];
        let mut rng = RngStream::new(8, 8);
        let cov = Dataset::gaussian(&mut rng, p.n2, &[0.0, 0.0], &Matrix::identity(2, 2)).unwrap();
        for i in 0..p.n2 {
            rows.push(cov.row(i).to_vec());
        }
        for i in 0..p.n2 {
            rows.push(cov.row(i).iter().map(|v| -v).collect());
        }
        let x = Dataset::from_rows(&rows).unwrap();
        let (res, trace) = sample_unbounded(&x, &p, &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(trace.cov_uniform, Some(true));
        assert!(trace.mean_uniform);
        let z = res.value().unwrap();
        assert_eq!(z.len(), 2);
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn prepared_release_matches_direct_run() {
        let p = std_plan(2);
        let mut rng = RngStream::new(21, 0);
        let x = Dataset::gaussian(&mut rng, p.n, &[5.0, -2.0], &Matrix::identity(2, 2)).unwrap();
        let prep = PreparedUnbounded::new(&x, &p).unwrap();
        for s in 0..5 {
            let a = run_unbounded(&x, &p, &mut RngStream::new(s, 3)).unwrap();
            let b = prep.release(&mut RngStream::new(s, 3)).unwrap();
            assert_eq!(a.result, b.result);
            assert_eq!(a.trace, b.trace);
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let p = std_plan(1);
        let x = Dataset::gaussian(&mut RngStream::new(2, 0), p.n, &[0.0], &Matrix::identity(1, 1)).unwrap();
        let a = sample_unbounded(&x, &p, &mut RngStream::new(9, 9)).unwrap();
        let b = sample_unbounded(&x, &p, &mut RngStream::new(9, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn known_cov_single_point() {
        let mut p = std_plan(2);
        p.n1 = 1;
        p.m = 1;
        let x = Dataset::from_rows(&[vec![4.0, 2.0]]).unwrap();
        let (res, trace) = sample_known_cov(&x, &p, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(trace.score2, 0);
        assert_eq!(res.value().unwrap(), &[4.0, 2.0]);
    }

    #[test]
    fn cov_aware_constant_data_fails() {
        let p = PrivacyParams::new(1.0, 0.1).unwrap();
        let x = Dataset::from_rows(&vec![vec![1.0, 2.0]; 600]).unwrap();
        let (res, trace) = cov_aware_mean(&x, &p, 50.0, &mut RngStream::new(0, 0)).unwrap();
        assert!(res.is_fail());
        assert_eq!(trace.score1, Some(k_for(&p, LogBase::Natural)));
    }

    #[test]
    fn relaxed_plan_meets_stability_sizes() {
        let cfg = crate::privacy::PlanConfig::new(0.2, PrivacyParams::new(1.0, 0.1).unwrap(), 3)
            .with_mode(PlanMode::Relaxed { k: 5 });
        let p = crate::privacy::plan_with(&cfg).unwrap();
        assert!(p.unmet_stability_hypotheses().is_empty());
        assert_eq!(p.n, p.n1 + 2 * p.n2);
    }
}
