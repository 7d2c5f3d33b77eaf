//! Privacy of the score gate, computed exactly from its pass probabilities
//! and cross-checked against sampled gate decisions.

use dpgs::divergences::hockey_stick_discrete;
use dpgs::privacy::{ptr_check_with, PrivacyParams, PtrOutcome, PtrRule};
use dpgs::rng::RngStream;

/// Worst hockey-stick divergence between gate outputs at scores `s` and
/// `s ± 2`, over a fine grid of `s`.
fn worst_divergence(rule: PtrRule, p: &PrivacyParams) -> f64 {
    let top = rule.fail_threshold(p) + 4.0;
    let steps = 20_000;
    let mut worst = 0.0f64;
    for i in 0..=steps {
        let s = top * i as f64 / steps as f64;
        for t in [s + 2.0, (s - 2.0).max(0.0)] {
            let a = rule.pass_probability(s, p);
            let b = rule.pass_probability(t, p);
            let pa = [a, 1.0 - a];
            let pb = [b, 1.0 - b];
            worst = worst.max(hockey_stick_discrete(&pa, &pb, p.epsilon).unwrap());
        }
    }
    worst
}

fn params() -> Vec<PrivacyParams> {
    [(1.0, 1e-6), (0.5, 1e-3), (0.1, 1e-9), (0.9, 0.05)]
        .iter()
        .map(|&(e, d)| PrivacyParams::new(e, d).unwrap())
        .collect()
}

#[test]
fn calibrated_gate_meets_delta() {
    for p in params() {
        let w = worst_divergence(PtrRule::Calibrated, &p);
        assert!(w <= p.delta * (1.0 + 1e-6), "eps={} delta={} worst={w}", p.epsilon, p.delta);
        // The bound is attained, so the calibration is not loose.
        assert!(w >= p.delta * 0.99);
    }
}

#[test]
fn threshold_gate_meets_its_effective_delta() {
    for p in params() {
        let rule = PtrRule::Threshold;
        let w = worst_divergence(rule, &p);
        let eff = rule.effective_delta(&p);
        assert!(w <= eff * (1.0 + 1e-6), "worst={w} effective={eff}");
        assert!(w >= eff * 0.99);
    }
}

#[test]
fn threshold_gate_effective_delta_exceeds_delta_for_small_delta() {
    let p = PrivacyParams::new(1.0, 1e-6).unwrap();
    let eff = PtrRule::Threshold.effective_delta(&p);
    // (e − 1)/2 · √δ e^{-1} / (1 − √δ e^{-1})
    let q = 1e-3 * (-1.0f64).exp();
    let oracle = (1f64.exp() - 1.0) * 0.5 * q / (1.0 - q);
    assert!((eff - oracle).abs() < 1e-15);
    assert!(eff > 100.0 * p.delta);
}

#[test]
fn sampled_gate_matches_pass_probability() {
    let p = PrivacyParams::new(0.5, 1e-4).unwrap();
    let runs = 100_000;
    for rule in [PtrRule::Threshold, PtrRule::Calibrated] {
        let r = rule.radius(&p);
        for (si, s) in [0.5 * r, r, 1.3 * r].into_iter().enumerate() {
            let mut rng = RngStream::new(11, si as u64);
            let passes = (0..runs)
                .filter(|_| ptr_check_with(rule, s, &p, &mut rng) == PtrOutcome::Pass)
                .count() as f64;
            let prob = rule.pass_probability(s, &p);
            let sigma = (prob * (1.0 - prob) / runs as f64).sqrt().max(1e-6);
            assert!((passes / runs as f64 - prob).abs() < 5.0 * sigma, "{rule:?} s={s}");
        }
    }
}
