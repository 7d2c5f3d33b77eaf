//! Deterministic-grid audits of the privacy-loss sufficient conditions and
//! the matrix bounds behind the tail argument.

use crate::error::{Error, Result};
use crate::divergences::{scaled_projection_log_ratio, shift_log_ratio, t_density_log_ratio};
use crate::linalg::{matrix_norms, spectral_decomp, Matrix, Vector};
use crate::rng::{random_rotation, unit_sphere, RngStream};
use crate::stable::E2;

use super::{par_trials, AuditReport, Verdict};

/// Slack on `≤ ε/2` comparisons.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGridSpec {
    pub epsilon: f64,
    pub lambda0: f64,
    /// Minimum grid points inside each hypothesis region.
    pub points: usize,
    pub dims: Vec<usize>,
    /// Multiples of the smallest admissible `n₂ = ⌈32e²λ₀/ε⌉` (at which
    /// `γ = 8e²λ₀/n₂` reaches `ε/4`).
    pub n2_multiples: Vec<usize>,
}

impl DensityGridSpec {
    pub fn defaults(points: usize) -> Self {
        DensityGridSpec {
            epsilon: 0.5,
            lambda0: 20.0,
            points,
            dims: vec![2, 3],
            n2_multiples: vec![1, 10],
        }
    }

    fn n2_values(&self) -> Vec<usize> {
        let base = (32.0 * E2 * self.lambda0 / self.epsilon).ceil() as usize;
        self.n2_multiples.iter().map(|m| m * base).collect()
    }
}

#[derive(Default)]
struct GridTally {
    points: usize,
    violations: usize,
    max_ratio: f64,
}

impl GridTally {
    fn add(&mut self, v: f64, eps: f64) {
        self.points += 1;
        if v > eps / 2.0 + GRID_TOL {
            self.violations += 1;
        }
        self.max_ratio = self.max_ratio.max(v);
    }
}

/// Radius in `t` up to which a single sphere coordinate and its rescaling
/// have log-density ratio at most `ε/2`.
pub fn projection_radius(eps: f64, lambda0: f64) -> f64 {
    (2.0 / 3.0 * eps / (eps + 16.0 * E2 * lambda0)).sqrt()
}

fn projection_grid(spec: &DensityGridSpec, n2: usize, tally: &mut GridTally) -> Result<()> {
    let eps = spec.epsilon;
    let gamma = 8.0 * E2 * spec.lambda0 / n2 as f64;
    let r = projection_radius(eps, spec.lambda0);
    let ratios = [
        (1.0 - gamma).sqrt(),
        (1.0 - gamma / 2.0).sqrt(),
        1.0,
        1.0 / (1.0 - gamma / 2.0).sqrt(),
        1.0 / (1.0 - gamma).sqrt(),
    ];
    let g = spec.points.max(2);
    for &ratio in &ratios {
        for i in 0..=g {
            // Endpoints are exactly ±r.
            let t = if i == g { r } else { -r + 2.0 * r * i as f64 / g as f64 };
            tally.add(scaled_projection_log_ratio(t, ratio, n2)?, eps);
        }
    }
    Ok(())
}

/// Eigenvalues of `M = Σ̂^{1/2}Σ̂′⁻¹Σ̂^{1/2}` on the extreme points of the
/// admissible set `λ ∈ [1−γ, 1/(1−γ)]`, `Σ|λ−1| ≤ (1+2γ)γ`,
/// `Σ|1/λ−1| ≤ (1+2γ)γ`.
fn admissible_spectra(d: usize, gamma: f64, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let budget = (1.0 + 2.0 * gamma) * gamma;
    let below = |b: f64| b / (1.0 + b);
    let up = |b: f64| b.min(gamma / (1.0 - gamma));
    let mut out = vec![
        vec![1.0 - below(budget / d as f64).min(gamma); d],
        {
            let mut v = vec![1.0; d];
            v[0] = 1.0 - below(budget).min(gamma);
            v
        },
        {
            let mut v = vec![1.0; d];
            v[0] = 1.0 + up(budget);
            v
        },
        vec![1.0 + up(budget / d as f64); d],
    ];
    for _ in 0..4 {
        let mut v: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let s: f64 = v.iter().map(|x| x.abs()).sum();
        for x in v.iter_mut() {
            let b = budget * x.abs() / s;
            *x = if *x < 0.0 { 1.0 - below(b).min(gamma) } else { 1.0 + up(b) };
        }
        out.push(v);
    }
    out
}

fn conjugate(v: &Matrix, diag: &[f64]) -> Matrix {
    let d = Matrix::from_diagonal(&Vector::from_column_slice(diag));
    let m = v * d * v.transpose();
    0.5 * (&m + m.transpose())
}

/// Regular grid (plus boundary points) inside
/// `{y : Σλᵢyᵢ² ≤ ½, Σ(λᵢ−1)yᵢ² ≤ c}` in the eigenbasis of `M`.
fn quadric_region_points(lam: &[f64], c: f64, min_points: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let d = lam.len();
    let lmin = lam.iter().cloned().fold(f64::INFINITY, f64::min);
    let slack = c + (1.0 - lmin).max(0.0) / (2.0 * lmin);
    let half: Vec<f64> = lam
        .iter()
        .map(|&l| {
            let a = (0.5 / l).sqrt();
            if l > 1.0 {
                a.min((slack / (l - 1.0)).sqrt())
            } else {
                a
            }
        })
        .collect();
    let inside = |y: &[f64]| {
        let q: f64 = y.iter().zip(lam).map(|(a, l)| l * a * a).sum();
        let p: f64 = y.iter().zip(lam).map(|(a, l)| (l - 1.0) * a * a).sum();
        q <= 0.5 && p <= c
    };
    let mut g = 4usize;
    loop {
        let mut pts = Vec::new();
        let total = (g + 1).pow(d as u32);
        for code in 0..total {
            let mut rem = code;
            let mut y = vec![0.0; d];
            for a in 0..d {
                let i = rem % (g + 1);
                rem /= g + 1;
                y[a] = -half[a] + 2.0 * half[a] * i as f64 / g as f64;
            }
            if inside(&y) {
                pts.push(y);
            }
        }
        if pts.len() >= min_points {
            // Points on the region boundary along random directions.
            for _ in 0..min_points / 5 {
                let u = unit_sphere(rng, d);
                let q: f64 = u.iter().zip(lam).map(|(a, l)| l * a * a).sum();
                let p: f64 = u.iter().zip(lam).map(|(a, l)| (l - 1.0) * a * a).sum();
                let mut r2 = 0.5 / q;
                if p > 0.0 {
                    r2 = r2.min(c / p);
                }
                let r = r2.sqrt();
                let y: Vec<f64> = u.iter().map(|a| a * r).collect();
                pts.push(y);
            }
            return pts;
        }
        g *= 2;
    }
}

fn t_density_grid(spec: &DensityGridSpec, d: usize, n2: usize, rng: &mut RngStream, tally: &mut GridTally) -> Result<()> {
    let eps = spec.epsilon;
    let gamma = 8.0 * E2 * spec.lambda0 / n2 as f64;
    let c = eps / (4.0 * n2 as f64);
    for lam in admissible_spectra(d, gamma, rng) {
        let v = random_rotation(rng, d);
        let u = random_rotation(rng, d);
        let m = conjugate(&v, &lam);
        for y in quadric_region_points(&lam, c, spec.points, rng) {
            // s = V y, t = Uᵀ s
            let s = &v * Vector::from_vec(y);
            let t = u.transpose() * &s;
            let sms = (s.transpose() * &m * &s)[(0, 0)];
            let lift = sms - s.norm_squared();
            if sms > 0.5 + 1e-12 || lift > c * (1.0 + 1e-9) {
                return Err(Error::PreconditionViolated("grid point outside region".into()));
            }
            tally.add(t_density_log_ratio(t.as_slice(), &m, &u, n2, d)?, eps);
        }
    }
    Ok(())
}

fn shift_grid(spec: &DensityGridSpec, d: usize, n2: usize, rng: &mut RngStream, tally: &mut GridTally) -> Result<()> {
    let eps = spec.epsilon;
    let ell_norm = eps / (5.0 * (n2 as f64).sqrt());
    let a = eps / (50.0 * n2 as f64 * ell_norm);
    let q = random_rotation(rng, d);
    let e: Vec<f64> = q.column(0).iter().cloned().collect();
    let ell: Vec<f64> = e.iter().map(|x| x * ell_norm).collect();
    let map = |par: f64, perp: &[f64]| -> Vec<f64> {
        let mut t = e.iter().map(|x| x * par).collect::<Vec<_>>();
        for (j, p) in perp.iter().enumerate() {
            for i in 0..d {
                t[i] += p * q[(i, j + 1)];
            }
        }
        t
    };
    let mut g = 8usize;
    let mut pts: Vec<Vec<f64>> = Vec::new();
    while pts.len() < spec.points {
        pts.clear();
        let total = (g + 1).pow(d as u32);
        for code in 0..total {
            let mut rem = code;
            let mut c = vec![0.0; d];
            for (k, slot) in c.iter_mut().enumerate() {
                let i = rem % (g + 1);
                rem /= g + 1;
                let h = if k == 0 { a } else { 0.9 };
                *slot = -h + 2.0 * h * i as f64 / g as f64;
            }
            let norm2: f64 = c.iter().map(|x| x * x).sum();
            if norm2 <= 0.81 {
                pts.push(map(c[0], &c[1..]));
            }
        }
        g *= 2;
    }
    // The worst corner: ‖t‖ = 0.9 with ⟨t, ℓ⟩ = −a‖ℓ‖, in several
    // perpendicular directions.
    for _ in 0..spec.points / 5 {
        let w = unit_sphere(rng, d - 1);
        let r = (0.81 - a * a).sqrt();
        let perp: Vec<f64> = w.iter().map(|x| x * r).collect();
        for sign in [-1.0, 1.0] {
            let mut t = map(sign * a, &perp);
            // Pull back inside by rounding so ‖t‖ ≤ 0.9 holds exactly.
            let nt: f64 = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nt > 0.9 {
                for x in t.iter_mut() {
                    *x *= 0.9 / nt;
                }
            }
            pts.push(t);
        }
    }
    for t in pts {
        tally.add(shift_log_ratio(&t, &ell, n2, d)?, eps);
    }
    Ok(())
}

/// Log-density ratios on grids over each sufficient-condition region, at
/// worst-case admissible parameters; every point must stay at most `ε/2`.
pub fn audit_density_lemmas(spec: &DensityGridSpec, base: &RngStream) -> Result<AuditReport> {
    let mut report = AuditReport::new("density_lemmas", base.seed(), "none");
    let mut rng = base.derive(0);
    let mut proj = GridTally::default();
    let mut tden = GridTally::default();
    let mut shift = GridTally::default();
    for n2 in spec.n2_values() {
        projection_grid(spec, n2, &mut proj)?;
        for &d in &spec.dims {
            t_density_grid(spec, d, n2, &mut rng, &mut tden)?;
            shift_grid(spec, d, n2, &mut rng, &mut shift)?;
        }
    }
    for (name, t) in [("projection", &proj), ("t_density", &tden), ("shift", &shift)] {
        report.stat(&format!("{name}_points"), t.points as f64);
        report.stat(&format!("{name}_violations"), t.violations as f64);
        report.stat(&format!("{name}_max_log_ratio"), t.max_ratio);
    }
    report.stat("epsilon", spec.epsilon);
    report.stat("lambda0", spec.lambda0);
    report.stat("limit", spec.epsilon / 2.0);
    report.stat(
        "shift_n1_at_bound",
        5.0 * (114.0 * spec.lambda0).sqrt() * std::f64::consts::E / spec.epsilon,
    );
    report.trials = proj.points + tden.points + shift.points;
    report.failures = proj.violations + tden.violations + shift.violations;
    report.verdict = Verdict::from_bool(report.failures == 0);
    Ok(report)
}

/// Trace, spectral norm and Frobenius norm of
/// `A = Qᵀ(M − I)Q − (ε/4n₂) I_{n₂}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixASummary {
    pub trace: f64,
    pub spectral: f64,
    pub frobenius_sq: f64,
}

/// From the spectrum of `M`, using the block structure
/// `A = diag(M − (1+c)I_d, −c I_{n₂−d})`, `c = ε/(4n₂)`.
pub fn matrix_a_summary(eigs: &[f64], eps: f64, n2: usize) -> MatrixASummary {
    let d = eigs.len();
    let c = eps / (4.0 * n2 as f64);
    let rest = (n2 - d) as f64;
    let trace = eigs.iter().map(|l| l - 1.0).sum::<f64>() - eps / 4.0;
    let mut spectral = eigs.iter().map(|l| (l - 1.0 - c).abs()).fold(0.0, f64::max);
    if n2 > d {
        spectral = spectral.max(c);
    }
    let frobenius_sq = eigs.iter().map(|l| (l - 1.0 - c).powi(2)).sum::<f64>() + rest * c * c;
    MatrixASummary {
        trace,
        spectral,
        frobenius_sq,
    }
}

/// Same quantities from the dense `n₂ × n₂` matrix; for small `n₂` only.
pub fn matrix_a_summary_dense(m: &Matrix, eps: f64, n2: usize) -> Result<MatrixASummary> {
    let d = m.nrows();
    let c = eps / (4.0 * n2 as f64);
    let mut a = Matrix::from_diagonal_element(n2, n2, -c);
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] += m[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    let norms = matrix_norms(&a)?;
    Ok(MatrixASummary {
        trace: a.trace(),
        spectral: norms.spectral,
        frobenius_sq: norms.frobenius * norms.frobenius,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBoundsSpec {
    pub dims: Vec<usize>,
    /// Sample-size constant in `n₂ = ⌈C₂ λ₀ ln(1/δ)/ε⌉`.
    pub c2: f64,
    pub eps_range: (f64, f64),
    pub lambda0_max: f64,
    pub log10_delta_min: f64,
}

impl Default for MatrixBoundsSpec {
    fn default() -> Self {
        MatrixBoundsSpec {
            dims: vec![2, 3, 5],
            // Large enough for every explicit requirement the bounds' proof
            // places on the constant: (48e²)² ≈ 125,793 for the Frobenius
            // ratio and C₂ ln(1/δ) ≥ 96e² for the spectral ratio.
            c2: 125_800.0,
            eps_range: (0.1, 1.0),
            lambda0_max: 200.0,
            log10_delta_min: -10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct MatrixTrial {
    d: usize,
    trace_bad: bool,
    trace_sign_bad: bool,
    spectral_bad: bool,
    frob_bad: bool,
    corollary_bad: bool,
    trace_ratio: f64,
    spectral_ratio: f64,
    frob_ratio: f64,
    corollary_ratio: f64,
}

const MATRIX_TOL: f64 = 1e-9;

/// Admissible `M` spectra rotate through three shapes: all slack in one
/// eigenvalue, slack spread evenly, and a random point of the feasible
/// set `λᵢ ∈ [1, 1/(1−γ)]`, `Σ(λᵢ − 1) ≤ (1+2γ)γ`.
fn matrix_spectrum(shape: usize, d: usize, gamma: f64, rng: &mut RngStream) -> Vec<f64> {
    let budget = (1.0 + 2.0 * gamma) * gamma;
    let cap = gamma / (1.0 - gamma);
    match shape {
        0 => {
            let mut v = vec![1.0; d];
            v[rng.below(d)] = 1.0 + budget.min(cap);
            v
        }
        1 => vec![1.0 + (budget / d as f64).min(cap); d],
        _ => loop {
            let w: Vec<f64> = (0..d).map(|_| -rng.open01().ln()).collect();
            let s: f64 = w.iter().sum();
            let total = budget * rng.open01();
            let x: Vec<f64> = w.iter().map(|v| total * v / s).collect();
            if x.iter().all(|&v| v <= cap) {
                break x.iter().map(|v| 1.0 + v).collect();
            }
        },
    }
}

/// The three bounds on `A` and the ratio bound derived from them, on
/// synthetic admissible pairs.
pub fn audit_matrix_bounds(trials: usize, spec: &MatrixBoundsSpec, base: &RngStream) -> Result<AuditReport> {
    let dims = &spec.dims;
    let rows = par_trials(trials * dims.len(), base, |t, rng| {
        let d = dims[t % dims.len()];
        let eps = rng.uniform(spec.eps_range.0, spec.eps_range.1);
        let log10_delta = rng.uniform(spec.log10_delta_min, (eps / 10.0).log10());
        let delta = 10f64.powf(log10_delta);
        let lambda0 = rng.uniform(d as f64, spec.lambda0_max);
        let l = (1.0 / delta).ln();
        let n2 = (spec.c2 * lambda0 * l / eps).ceil() as usize;
        let gamma = 8.0 * E2 * lambda0 / n2 as f64;
        let lam = matrix_spectrum((t / dims.len()) % 3, d, gamma, rng);
        let v = random_rotation(rng, d);
        let m = conjugate(&v, &lam);
        // Second route: recover the spectrum from the rotated matrix.
        let eigs = spectral_decomp(&m)?.eigvals;
        let a = matrix_a_summary(&eigs, eps, n2);
        let n2f = n2 as f64;
        let df = d as f64;
        let b1 = 1.5 * gamma - eps / 4.0;
        let b2 = eps / (4.0 * n2f) * (128.0 * E2 * lambda0 / 3.0 - 1.0);
        let b3 = df * eps * eps / (16.0 * n2f * n2f)
            * ((48.0 * E2 * lambda0 / (df * eps) - 1.0).powi(2) + (n2f / df - 1.0));
        let cor_lb = 3.0 * spec.c2 / (256.0 * E2) * l;
        let cor = (-a.trace / a.spectral).min(a.trace * a.trace / a.frobenius_sq);
        let over = |x: f64, b: f64| x > b + MATRIX_TOL * b.abs();
        Ok(MatrixTrial {
            d,
            trace_bad: over(a.trace, b1),
            trace_sign_bad: b1 >= 0.0,
            spectral_bad: over(a.spectral, b2),
            frob_bad: over(a.frobenius_sq, b3),
            corollary_bad: cor < cor_lb * (1.0 - MATRIX_TOL),
            trace_ratio: (a.trace + eps / 4.0) / (b1 + eps / 4.0),
            spectral_ratio: a.spectral / b2,
            frob_ratio: a.frobenius_sq / b3,
            corollary_ratio: cor / cor_lb,
        })
    })?;
    let mut report = AuditReport::new("matrix_bounds", base.seed(), "none");
    report.trials = rows.len();
    let any = |r: &MatrixTrial| r.trace_bad || r.trace_sign_bad || r.spectral_bad || r.frob_bad || r.corollary_bad;
    report.failures = rows.iter().filter(|r| any(r)).count();
    for &d in dims {
        let sel: Vec<&MatrixTrial> = rows.iter().filter(|r| r.d == d).collect();
        let count = |f: fn(&MatrixTrial) -> bool| sel.iter().filter(|r| f(r)).count() as f64;
        let maxr = |f: fn(&MatrixTrial) -> f64| sel.iter().map(|r| f(r)).fold(f64::NEG_INFINITY, f64::max);
        report.stat(&format!("d{d}_trace_violations"), count(|r| r.trace_bad || r.trace_sign_bad));
        report.stat(&format!("d{d}_spectral_violations"), count(|r| r.spectral_bad));
        report.stat(&format!("d{d}_frobenius_violations"), count(|r| r.frob_bad));
        report.stat(&format!("d{d}_ratio_bound_violations"), count(|r| r.corollary_bad));
        report.stat(&format!("d{d}_max_trace_slack_ratio"), maxr(|r| r.trace_ratio));
        report.stat(&format!("d{d}_max_spectral_over_bound"), maxr(|r| r.spectral_ratio));
        report.stat(&format!("d{d}_max_frobenius_over_bound"), maxr(|r| r.frob_ratio));
        report.stat(
            &format!("d{d}_min_ratio_over_bound"),
            sel.iter().map(|r| r.corollary_ratio).fold(f64::INFINITY, f64::min),
        );
    }
    report.stat("c2", spec.c2);
    report.verdict = Verdict::from_bool(report.failures == 0);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_and_dense_routes_agree() {
        let mut rng = RngStream::new(5, 0);
        for d in [2usize, 3] {
            let lam = matrix_spectrum(2, d, 0.05, &mut rng);
            let v = random_rotation(&mut rng, d);
            let m = conjugate(&v, &lam);
            let eigs = spectral_decomp(&m).unwrap().eigvals;
            let n2 = 40;
            let a = matrix_a_summary(&eigs, 0.7, n2);
            let b = matrix_a_summary_dense(&m, 0.7, n2).unwrap();
            assert!((a.trace - b.trace).abs() < 1e-12);
            assert!((a.spectral - b.spectral).abs() < 1e-12);
            assert!((a.frobenius_sq - b.frobenius_sq).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_m_gives_minus_quarter_eps() {
        let a = matrix_a_summary(&[1.0, 1.0, 1.0], 0.8, 1000);
        assert!((a.trace + 0.2).abs() < 1e-15);
        assert!((a.spectral - 0.8 / 4000.0).abs() < 1e-18);
    }

    /// With all slack in one eigenvalue, `‖A‖ ≈ (1+2γ)γ` exceeds the
    /// stated `(ε/4n₂)(128e²λ₀/3 − 1)` whenever `ε` is small, while the
    /// bound with an extra `1/ε` inside holds.
    #[test]
    fn spectral_bound_needs_inverse_eps_at_vertex() {
        let (eps, lambda0, delta) = (0.2f64, 50.0f64, 1e-6f64);
        let c2 = MatrixBoundsSpec::default().c2;
        let n2 = (c2 * lambda0 * (1.0 / delta).ln() / eps).ceil() as usize;
        let gamma = 8.0 * E2 * lambda0 / n2 as f64;
        let top = 1.0 + ((1.0 + 2.0 * gamma) * gamma).min(gamma / (1.0 - gamma));
        let a = matrix_a_summary(&[top, 1.0], eps, n2);
        let c = eps / (4.0 * n2 as f64);
        let stated = c * (128.0 * E2 * lambda0 / 3.0 - 1.0);
        let with_inverse_eps = c * (128.0 * E2 * lambda0 / (3.0 * eps) - 1.0);
        assert!(a.spectral > stated);
        assert!(a.spectral <= with_inverse_eps);
    }

    #[test]
    fn projection_boundary_point_passes() {
        let (eps, lambda0) = (0.5, 20.0);
        let n2 = (32.0 * E2 * lambda0 / eps).ceil() as usize;
        let gamma = 8.0 * E2 * lambda0 / n2 as f64;
        let r = projection_radius(eps, lambda0);
        for ratio in [(1.0 - gamma).sqrt(), 1.0 / (1.0 - gamma).sqrt()] {
            assert!(scaled_projection_log_ratio(r, ratio, n2).unwrap() <= eps / 2.0);
        }
    }
}
