//! Privacy parameters, the propose-test-release gate and the sample-size
//! planner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stable::{EstimatorConfig, E2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta <= epsilon / 10.0) {
            return Err(Error::InvalidParams(format!(
                "delta must lie in (0, epsilon/10] = (0, {}], got {delta}",
                epsilon / 10.0
            )));
        }
        Ok(PrivacyParams { epsilon, delta })
    }

    /// `(ε/a, δ/b)`, used for the gate's share of the budget.
    pub fn split(&self, a: f64, b: f64) -> PrivacyParams {
        PrivacyParams {
            epsilon: self.epsilon / a,
            delta: self.delta / b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

impl LogBase {
    pub fn log(&self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PtrOutcome {
    Pass,
    Fail,
}

/// How the gate's noise and threshold are calibrated. Both add truncated
/// Laplace noise of scale `2/ε` and pass iff `score + η < radius`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PtrRule {
    /// Radius `ln(1/δ)/ε + 2`: always passes at 0 and always fails from
    /// `2 ln(1/δ)/ε + 4` on. Its exact privacy level is `effective_delta`,
    /// which is of order `√δ` and so exceeds `δ` unless `δ` is large.
    #[default]
    Threshold,
    /// Radius `(2/ε) ln(1 + (e^ε − 1)/(2δ))`: exactly `(ε, δ)`-DP for
    /// sensitivity-2 scores, always passes at 0, always fails from twice
    /// the radius on.
    Calibrated,
}

const PTR_SENSITIVITY: f64 = 2.0;

impl PtrRule {
    pub fn scale(&self, p: &PrivacyParams) -> f64 {
        PTR_SENSITIVITY / p.epsilon
    }

    pub fn radius(&self, p: &PrivacyParams) -> f64 {
        match self {
            PtrRule::Threshold => (1.0 / p.delta).ln() / p.epsilon + 2.0,
            PtrRule::Calibrated => {
                self.scale(p) * (p.epsilon.exp_m1() / (2.0 * p.delta)).ln_1p()
            }
        }
    }

    /// Smallest score at which the gate fails with certainty.
    pub fn fail_threshold(&self, p: &PrivacyParams) -> f64 {
        2.0 * self.radius(p)
    }

    /// Exact `δ'` such that the gate is `(ε, δ')`-DP for sensitivity-2
    /// scores.
    pub fn effective_delta(&self, p: &PrivacyParams) -> f64 {
        let q = (-self.radius(p) / self.scale(p)).exp();
        p.epsilon.exp_m1() * 0.5 * q / (1.0 - q)
    }

    /// `Pr[Pass | score]`
    pub fn pass_probability(&self, score: f64, p: &PrivacyParams) -> f64 {
        let r = self.radius(p);
        tlap_cdf(r - score, self.scale(p), r)
    }
}

fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// `Pr[η < x]` for Laplace(0, b) truncated to `[−r, r]`.
fn tlap_cdf(x: f64, b: f64, r: f64) -> f64 {
    if x <= -r {
        return 0.0;
    }
    if x >= r {
        return 1.0;
    }
    let lo = laplace_cdf(-r, b);
    (laplace_cdf(x, b) - lo) / (1.0 - 2.0 * lo)
}

/// Laplace(0, b) truncated to the open interval `(−r, r)`, by inversion.
pub fn truncated_laplace(rng: &mut RngStream, b: f64, r: f64) -> f64 {
    let lo = laplace_cdf(-r, b);
    loop {
        let t = lo + rng.open01() * (1.0 - 2.0 * lo);
        let eta = if t < 0.5 {
            b * (2.0 * t).ln()
        } else {
            -b * (2.0 * (1.0 - t)).ln()
        };
        if eta.abs() < r {
            return eta;
        }
    }
}

pub fn ptr_check_with(rule: PtrRule, score: f64, p: &PrivacyParams, rng: &mut RngStream) -> PtrOutcome {
    let r = rule.radius(p);
    let eta = truncated_laplace(rng, rule.scale(p), r);
    if score + eta < r {
        PtrOutcome::Pass
    } else {
        PtrOutcome::Fail
    }
}

/// The default gate, `PtrRule::Threshold`.
pub fn ptr_check(score: f64, p: &PrivacyParams, rng: &mut RngStream) -> PtrOutcome {
    ptr_check_with(PtrRule::Threshold, score, p, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PlanMode {
    /// Sizes from the sample-complexity formulas.
    #[default]
    Standard,
    /// Standard sizes raised to meet the stability guarantees' size
    /// hypotheses `n₁ ≥ 32e²k`, `n₂ ≥ 16e²λ₀k`.
    Strict,
    /// Small fixed `k` with `λ₀` set to a chi-square tail quantile and
    /// sizes at the stability hypotheses. Not tied to `(ε, δ)` through `k`.
    Relaxed { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub alpha: f64,
    pub params: PrivacyParams,
    pub d: usize,
    pub c1: f64,
    pub c2: f64,
    pub log_base: LogBase,
    pub mode: PlanMode,
}

impl PlanConfig {
    pub fn new(alpha: f64, params: PrivacyParams, d: usize) -> Self {
        PlanConfig {
            alpha,
            params,
            d,
            c1: 1.0,
            c2: 1.0,
            log_base: LogBase::Natural,
            mode: PlanMode::Standard,
        }
    }

    pub fn with_constants(mut self, c1: f64, c2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self
    }

    pub fn with_mode(mut self, mode: PlanMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_log_base(mut self, log_base: LogBase) -> Self {
        self.log_base = log_base;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerPlan {
    pub alpha: f64,
    pub d: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub lambda0: f64,
    pub n1: usize,
    pub n2: usize,
    pub n: usize,
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub c1: f64,
    pub c2: f64,
    /// Noise multiplier of the covariance-aware mean estimator at sample
    /// size `n`.
    pub c_sq: f64,
    pub log_base: LogBase,
    pub mode: PlanMode,
    pub core_factor: f64,
    pub ptr_rule: PtrRule,
}

impl SamplerPlan {
    pub fn params(&self) -> PrivacyParams {
        PrivacyParams {
            epsilon: self.epsilon,
            delta: self.delta,
        }
    }

    /// Budget share of the gate: `(ε/3, δ/6)`.
    pub fn ptr_params(&self) -> PrivacyParams {
        self.params().split(3.0, 6.0)
    }

    /// Stability slack `γ = 8e²λ₀/n₂`.
    pub fn gamma(&self) -> f64 {
        8.0 * E2 * self.lambda0 / self.n2 as f64
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            lambda0: self.lambda0,
            k: self.k,
            core_factor: self.core_factor,
        }
    }

    /// Which stability size hypotheses this plan violates.
    pub fn unmet_stability_hypotheses(&self) -> Vec<&'static str> {
        let k = self.k as f64;
        let mut out = Vec::new();
        if (self.n1 as f64) < 32.0 * E2 * k {
            out.push("n1 >= 32 e^2 k");
        }
        if (self.n2 as f64) < 16.0 * E2 * self.lambda0 * k {
            out.push("n2 >= 16 e^2 lambda0 k");
        }
        if self.m <= 6 * self.k {
            out.push("|R| > 6k");
        }
        out
    }
}

/// Outlier threshold under which `n` Gaussian points are all inliers with
/// probability `1 − α`: `4d + 8√(d ln(3n/α)) + 8 ln(3n/α)`.
pub fn lambda0_for(d: usize, n: usize, alpha: f64) -> f64 {
    let l = (3.0 * n as f64 / alpha).ln();
    4.0 * d as f64 + 8.0 * (d as f64 * l).sqrt() + 8.0 * l
}

/// `⌈6 log(6/δ)/ε⌉ + 4`
pub fn k_for(p: &PrivacyParams, base: LogBase) -> usize {
    (6.0 * base.log(6.0 / p.delta) / p.epsilon).ceil() as usize + 4
}

/// `6k + ⌈18 log(16n/δ)⌉`
pub fn reference_size_for(k: usize, n: usize, p: &PrivacyParams, base: LogBase) -> usize {
    6 * k + (18.0 * base.log(16.0 * n as f64 / p.delta)).ceil() as usize
}

/// `720 e² λ₀ log(12/δ) / (ε² n²)`
pub fn c_sq_for(lambda0: f64, n: usize, p: &PrivacyParams, base: LogBase) -> f64 {
    720.0 * E2 * lambda0 * base.log(12.0 / p.delta) / (p.epsilon * p.epsilon * (n as f64).powi(2))
}

/// Relaxed-mode outlier threshold: the chi-square tail quantile
/// `d + 2√(dL) + 2L` with `L = ln(2m)`, so that among `m` points the expected
/// number of outliers is at most 1/2.
pub fn relaxed_lambda0(d: usize, m: usize) -> f64 {
    let l = (2.0 * m as f64).ln();
    d as f64 + 2.0 * (d as f64 * l).sqrt() + 2.0 * l
}

const MAX_PLAN_ITERS: usize = 100;

pub fn plan(alpha: f64, params: PrivacyParams, d: usize, c1: f64, c2: f64) -> Result<SamplerPlan> {
    plan_with(&PlanConfig::new(alpha, params, d).with_constants(c1, c2))
}

/// Resolves the circular dependence between `λ₀` and `n` by fixed-point
/// iteration on `n`; every size is nondecreasing in `n`, so the sequence
/// started from `n = 1` increases until it stops.
pub fn plan_with(cfg: &PlanConfig) -> Result<SamplerPlan> {
    let p = PrivacyParams::new(cfg.params.epsilon, cfg.params.delta)?;
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidParams(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    if cfg.d == 0 {
        return Err(Error::InvalidParams("dimension must be positive".into()));
    }
    if !(cfg.c1 >= 1.0 && cfg.c2 >= 1.0) {
        return Err(Error::InvalidParams("c1 and c2 must be >= 1".into()));
    }
    let base = cfg.log_base;
    let lg = base.log(1.0 / p.delta) / p.epsilon;
    let k = match cfg.mode {
        PlanMode::Relaxed { k } => {
            if k < 5 {
                return Err(Error::InvalidParams("relaxed k must be >= 5".into()));
            }
            k
        }
        _ => k_for(&p, base),
    };
    let kf = k as f64;

    let mut n = 1usize;
    let mut prev_n2 = 1usize;
    for _ in 0..MAX_PLAN_ITERS {
        let (lambda0, mut n1, mut n2) = match cfg.mode {
            PlanMode::Relaxed { .. } => {
                let lambda0 = relaxed_lambda0(cfg.d, prev_n2).max(1.0);
                let n2 = (16.0 * E2 * lambda0 * kf).ceil() as usize;
                let n1 = (32.0 * E2 * kf).ceil() as usize;
                (lambda0, n1, n2)
            }
            _ => {
                let lambda0 = lambda0_for(cfg.d, n, cfg.alpha);
                let n1 = (cfg.c1 * lambda0.sqrt() * lg).ceil() as usize;
                let n2 = (cfg.c2 * lambda0 * lg).ceil() as usize;
                (lambda0, n1, n2)
            }
        };
        if cfg.mode == PlanMode::Strict {
            n1 = n1.max((32.0 * E2 * kf).ceil() as usize);
            n2 = n2.max((16.0 * E2 * lambda0 * kf).ceil() as usize);
        }
        n2 = n2.max(1);
        let m = reference_size_for(k, n, &p, base);
        // R is drawn from the mean block, which must hold at least M points.
        n1 = n1.max(m);
        let next = n1 + 2 * n2;
        if next == n && n2 == prev_n2 {
            return Ok(SamplerPlan {
                alpha: cfg.alpha,
                d: cfg.d,
                epsilon: p.epsilon,
                delta: p.delta,
                lambda0,
                n1,
                n2,
                n,
                k,
                m,
                c1: cfg.c1,
                c2: cfg.c2,
                c_sq: c_sq_for(lambda0, n, &p, base),
                log_base: base,
                mode: cfg.mode,
                core_factor: E2,
                ptr_rule: PtrRule::Threshold,
            });
        }
        n = next;
        prev_n2 = n2;
    }
    Err(Error::NoConvergence(MAX_PLAN_ITERS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_ranges() {
        assert!(PrivacyParams::new(1.5, 0.01).is_err());
        assert!(PrivacyParams::new(0.5, 0.06).is_err());
        assert!(PrivacyParams::new(0.0, 0.0).is_err());
        assert!(PrivacyParams::new(1.0, 0.1).is_ok());
    }

    #[test]
    fn k_example() {
        let p = PrivacyParams::new(1.0, 6.0 * (-6.0f64).exp()).unwrap();
        assert_eq!(k_for(&p, LogBase::Natural), 40);
    }

    #[test]
    fn lambda0_example() {
        let l = 1000f64.ln();
        let expect = 16.0 + 8.0 * (4.0 * l).sqrt() + 8.0 * l;
        assert!((lambda0_for(4, 100, 0.3) - expect).abs() < 1e-12);
        assert!((lambda0_for(4, 100, 0.3) - 113.3).abs() < 0.05);
    }

    #[test]
    fn c_sq_example() {
        let p = PrivacyParams { epsilon: 1.0, delta: 12.0 / std::f64::consts::E };
        let c = c_sq_for(10.0, 100, &p, LogBase::Natural);
        assert!((c - 0.72 * E2).abs() < 1e-12);
    }

    #[test]
    fn gate_extremes() {
        let p = PrivacyParams::new(0.7, 0.01).unwrap();
        let mut rng = RngStream::new(1, 1);
        let top = 2.0 * (1.0 / p.delta).ln() / p.epsilon + 4.0;
        for _ in 0..2000 {
            assert_eq!(ptr_check(0.0, &p, &mut rng), PtrOutcome::Pass);
            assert_eq!(ptr_check(top, &p, &mut rng), PtrOutcome::Fail);
        }
    }

    #[test]
    fn calibrated_gate_delta_is_exact() {
        let p = PrivacyParams::new(0.5, 0.01).unwrap();
        let d = PtrRule::Calibrated.effective_delta(&p);
        assert!((d - p.delta).abs() < 1e-15);
        assert!(PtrRule::Threshold.effective_delta(&p) > p.delta);
    }

    #[test]
    fn plan_structure() {
        let p = PrivacyParams::new(1.0, 1e-3).unwrap();
        let s = plan(0.2, p, 2, 1.0, 1.0).unwrap();
        assert_eq!(s.n, s.n1 + 2 * s.n2);
        assert_eq!(s.k, k_for(&p, LogBase::Natural));
        assert_eq!(s.m, reference_size_for(s.k, s.n, &p, LogBase::Natural));
        assert!(s.lambda0 >= lambda0_for(2, s.n, 0.2) - 1e-12);
        assert!(s.n1 >= s.m);
    }
}
