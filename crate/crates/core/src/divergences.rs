//! Densities, hockey-stick and total-variation distances, and the log
//! density ratios that bound the sampler's privacy loss.

use std::f64::consts::PI;
use std::sync::Arc;

use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{log_det_pd, Matrix, Vector};
use crate::rng::RngStream;

/// A one-dimensional density given by its log, on the interval
/// `[lo, hi]` (endpoints may be infinite). `loc` and `scale` locate the
/// bulk of the mass and only steer the quadrature.
#[derive(Clone)]
pub struct Density1D {
    log_pdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub lo: f64,
    pub hi: f64,
    pub loc: f64,
    pub scale: f64,
}

impl std::fmt::Debug for Density1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Density1D")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("loc", &self.loc)
            .field("scale", &self.scale)
            .finish()
    }
}

impl Density1D {
    pub fn new(
        log_pdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
        loc: f64,
        scale: f64,
    ) -> Self {
        Density1D {
            log_pdf: Arc::new(log_pdf),
            lo,
            hi,
            loc,
            scale,
        }
    }

    pub fn normal(mu: f64, sigma: f64) -> Self {
        let c = -sigma.ln() - 0.5 * (2.0 * PI).ln();
        Density1D::new(
            move |x| c - 0.5 * ((x - mu) / sigma).powi(2),
            f64::NEG_INFINITY,
            f64::INFINITY,
            mu,
            sigma,
        )
    }

    pub fn uniform(a: f64, b: f64) -> Self {
        let c = -(b - a).ln();
        Density1D::new(
            move |x| if (a..=b).contains(&x) { c } else { f64::NEG_INFINITY },
            a,
            b,
            0.5 * (a + b),
            b - a,
        )
    }

    pub fn laplace(mu: f64, b: f64) -> Self {
        let c = -(2.0 * b).ln();
        Density1D::new(
            move |x| c - (x - mu).abs() / b,
            f64::NEG_INFINITY,
            f64::INFINITY,
            mu,
            b,
        )
    }

    /// First coordinate of a uniform point on the unit sphere in ℝⁿ.
    pub fn sphere_coordinate(n: usize) -> Self {
        let dens = ProjectedSphereDensity::new(n, 1);
        Density1D::new(
            move |x| dens.log_pdf(&[x]).unwrap_or(f64::NEG_INFINITY),
            -1.0,
            1.0,
            0.0,
            1.0 / (n as f64).sqrt(),
        )
    }

    /// Law of `a + b·X` for `X` with this density (`b > 0`).
    pub fn affine(&self, a: f64, b: f64) -> Self {
        let f = self.log_pdf.clone();
        let lb = b.ln();
        Density1D::new(
            move |y| f((y - a) / b) - lb,
            a + b * self.lo,
            a + b * self.hi,
            a + b * self.loc,
            b * self.scale,
        )
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::NEG_INFINITY;
        }
        (self.log_pdf)(x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }
}

/// Law of the first `i` coordinates of a uniform unit vector in ℝⁿ:
/// density `Γ(i/2) / (π^{i/2} B(i/2, (n−i)/2)) · (1 − ‖x‖²)^{(n−i)/2 − 1}`
/// on the open unit ball, so that `‖x‖² ~ Beta(i/2, (n−i)/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSphereDensity {
    pub n: usize,
    pub i: usize,
    log_norm: f64,
}

impl ProjectedSphereDensity {
    pub fn new(n: usize, i: usize) -> Self {
        assert!(i >= 1 && i < n, "need 1 <= i < n");
        let a = i as f64 / 2.0;
        let b = (n - i) as f64 / 2.0;
        let log_norm = ln_gamma(a) - a * PI.ln() - ln_beta(a, b);
        ProjectedSphereDensity { n, i, log_norm }
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.i {
            return Err(Error::DimensionMismatch {
                expected: self.i,
                got: x.len(),
            });
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 >= 1.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let e = (self.n - self.i) as f64 / 2.0 - 1.0;
        Ok(self.log_norm + e * (-r2).ln_1p())
    }
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const GK_WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss–Kronrod 7/15 panel: (Kronrod estimate, error estimate).
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for j in 0..7 {
        let x = h * GK_NODES[j];
        let s = f(c - x) + f(c + x);
        k += GK_WK[j] * s;
        if j % 2 == 1 {
            g += GK_WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let (val, err) = gk15(f, a, b);
    if err <= tol.max(1e-15 * val.abs()) {
        return Ok(val);
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure(format!(
            "interval [{a}, {b}] error {err:e} above {tol:e}"
        )));
    }
    let m = 0.5 * (a + b);
    Ok(adaptive(f, a, m, 0.5 * tol, depth - 1)? + adaptive(f, m, b, 0.5 * tol, depth - 1)?)
}

/// Maps the quadrature variable `t` to `x` and returns `(x, dx/dt)`.
#[derive(Clone, Copy)]
enum Chart {
    Finite,
    /// `x = loc + s·t/(1−t²)` on `(−1, 1)`
    Both { loc: f64, s: f64 },
    /// `x = a + s·t/(1−t)` on `[0, 1)`
    Upper { a: f64, s: f64 },
    /// `x = b − s·t/(1−t)` on `[0, 1)`
    Lower { b: f64, s: f64 },
}

impl Chart {
    fn eval(&self, t: f64) -> (f64, f64) {
        match *self {
            Chart::Finite => (t, 1.0),
            Chart::Both { loc, s } => {
                let q = 1.0 - t * t;
                (loc + s * t / q, s * (1.0 + t * t) / (q * q))
            }
            Chart::Upper { a, s } => {
                let q = 1.0 - t;
                (a + s * t / q, s / (q * q))
            }
            Chart::Lower { b, s } => {
                let q = 1.0 - t;
                (b - s * t / q, s / (q * q))
            }
        }
    }

    fn inverse(&self, x: f64) -> f64 {
        match *self {
            Chart::Finite => x,
            Chart::Both { loc, s } => {
                let y = (x - loc) / s;
                if y == 0.0 {
                    0.0
                } else {
                    (-1.0 + (1.0 + 4.0 * y * y).sqrt()) / (2.0 * y)
                }
            }
            Chart::Upper { a, s } => {
                let y = (x - a) / s;
                y / (1.0 + y)
            }
            Chart::Lower { b, s } => {
                let y = (b - x) / s;
                y / (1.0 + y)
            }
        }
    }

    fn domain(&self, lo: f64, hi: f64) -> (f64, f64) {
        match self {
            Chart::Finite => (lo, hi),
            Chart::Both { .. } => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

/// `∫ f` over `[lo, hi]` with breakpoints at the listed points and at every
/// sign change of `kink` (located by bisection).
fn integrate_piecewise(
    f: &dyn Fn(f64) -> f64,
    kink: Option<&dyn Fn(f64) -> f64>,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    loc: f64,
    scale: f64,
    tol: f64,
) -> Result<f64> {
    let s = scale.abs().max(1e-300);
    let chart = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => Chart::Finite,
        (false, false) => Chart::Both { loc, s },
        (true, false) => Chart::Upper { a: lo, s },
        (false, true) => Chart::Lower { b: hi, s },
    };
    let (t0, t1) = chart.domain(lo, hi);
    let g = |t: f64| {
        if t <= t0 || t >= t1 {
            // Endpoints of infinite charts map to ±∞, where every density
            // here vanishes.
            if !matches!(chart, Chart::Finite) {
                return 0.0;
            }
        }
        let (x, jac) = chart.eval(t);
        let v = f(x) * jac;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };

    let mut cuts: Vec<f64> = breaks
        .iter()
        .filter(|&&b| b > lo && b < hi)
        .map(|&b| chart.inverse(b))
        .collect();
    if let Some(h) = kink {
        let hk = |t: f64| h(chart.eval(t).0);
        let grid = 4096;
        let pts: Vec<f64> = (1..grid).map(|j| t0 + (t1 - t0) * j as f64 / grid as f64).collect();
        let mut prev = (pts[0], hk(pts[0]));
        for &t in &pts[1..] {
            let v = hk(t);
            if prev.1.is_finite() && v.is_finite() && (prev.1 > 0.0) != (v > 0.0) && prev.1 != 0.0 && v != 0.0 {
                let (mut a, mut b) = (prev.0, t);
                let sa = prev.1 > 0.0;
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    if (hk(m) > 0.0) == sa {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                cuts.push(0.5 * (a + b));
            }
            prev = (t, v);
        }
    }
    cuts.push(t0);
    cuts.push(t1);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let pieces = cuts.len() - 1;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            total += adaptive(&g, w[0], w[1], tol / pieces as f64, 60)?;
        }
    }
    Ok(total)
}

fn joint_range(p: &Density1D, q: &Density1D) -> (f64, f64, Vec<f64>, f64, f64) {
    let lo = p.lo.min(q.lo);
    let hi = p.hi.max(q.hi);
    let breaks = vec![p.lo, p.hi, q.lo, q.hi, p.loc, q.loc];
    let loc = 0.5 * (p.loc + q.loc);
    let scale = p.scale.max(q.scale).max((p.loc - q.loc).abs());
    (lo, hi, breaks, loc, scale)
}

/// `∫ p` by the same quadrature as the divergences.
pub fn total_mass(p: &Density1D) -> Result<f64> {
    let f = |x: f64| p.pdf(x);
    integrate_piecewise(&f, None, p.lo, p.hi, &[], p.loc, p.scale, 1e-12)
}

/// Both forms of the hockey-stick divergence `D_{e^ε}(P‖Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HockeyStick {
    /// `½ ∫|p − e^ε q| − ½(e^ε − 1)`
    pub integral_form: f64,
    /// `∫ (p − e^ε q)₊ = max_S P(S) − e^ε Q(S)`
    pub event_form: f64,
}

pub fn hockey_stick_forms(p: &Density1D, q: &Density1D, eps: f64) -> Result<HockeyStick> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidParams(format!("eps must be >= 0, got {eps}")));
    }
    let c = eps.exp();
    let (lo, hi, breaks, loc, scale) = joint_range(p, q);
    let h = |x: f64| p.pdf(x) - c * q.pdf(x);
    let abs = |x: f64| h(x).abs();
    let pos = |x: f64| h(x).max(0.0);
    let tol = 1e-12;
    let int_abs = integrate_piecewise(&abs, Some(&h), lo, hi, &breaks, loc, scale, tol)?;
    let int_pos = integrate_piecewise(&pos, Some(&h), lo, hi, &breaks, loc, scale, tol)?;
    Ok(HockeyStick {
        integral_form: 0.5 * int_abs - 0.5 * eps.exp_m1(),
        event_form: int_pos,
    })
}

/// `D_{e^ε}(P‖Q)` by quadrature, clamped to `[0, 1]`.
pub fn hockey_stick_1d(p: &Density1D, q: &Density1D, eps: f64) -> Result<f64> {
    Ok(hockey_stick_forms(p, q, eps)?.event_form.clamp(0.0, 1.0))
}

pub fn tv_1d(p: &Density1D, q: &Density1D) -> Result<f64> {
    let (lo, hi, breaks, loc, scale) = joint_range(p, q);
    let h = |x: f64| p.pdf(x) - q.pdf(x);
    let abs = |x: f64| h(x).abs();
    Ok(0.5 * integrate_piecewise(&abs, Some(&h), lo, hi, &breaks, loc, scale, 1e-12)?)
}

/// `Σ (pᵢ − e^ε qᵢ)₊` on a finite support.
pub fn hockey_stick_discrete(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    let c = eps.exp();
    Ok(p.iter().zip(q).map(|(a, b)| (a - c * b).max(0.0)).sum())
}

/// `½ Σ |pᵢ − e^ε qᵢ| − ½(e^ε − 1)` on a finite support.
pub fn hockey_stick_discrete_integral(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    let c = eps.exp();
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - c * b).abs()).sum::<f64>() - 0.5 * eps.exp_m1())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakTriangle {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `D_{e^{ε₁+ε₂}}(P‖Q) ≤ D_{e^{ε₁}}(P‖R) + e^{ε₁} D_{e^{ε₂}}(R‖Q)`,
/// evaluated exactly on a finite support.
pub fn weak_triangle(p: &[f64], q: &[f64], r: &[f64], eps1: f64, eps2: f64) -> Result<WeakTriangle> {
    if r.len() != p.len() {
        return Err(Error::SupportMismatch(p.len(), r.len()));
    }
    let lhs = hockey_stick_discrete(p, q, eps1 + eps2)?;
    let rhs = hockey_stick_discrete(p, r, eps1)? + eps1.exp() * hockey_stick_discrete(r, q, eps2)?;
    Ok(WeakTriangle {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
    })
}

pub fn weak_triangle_check(p: &[f64], q: &[f64], r: &[f64], eps1: f64, eps2: f64) -> Result<bool> {
    Ok(weak_triangle(p, q, r, eps1, eps2)?.holds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bins {
    /// `⌈n^{1/3}⌉` per axis, `n` the larger sample size.
    Auto,
    PerAxis(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    pub tv: f64,
    pub boot_sigma: f64,
    pub bins_per_axis: usize,
}

struct Grid {
    d: usize,
    bins: usize,
    lo: Vec<f64>,
    width: Vec<f64>,
}

impl Grid {
    fn cell(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for a in 0..self.d {
            let b = if self.width[a] > 0.0 {
                (((x[a] - self.lo[a]) / self.width[a]) as usize).min(self.bins - 1)
            } else {
                0
            };
            idx = idx * self.bins + b;
        }
        idx
    }

    fn cells(&self) -> usize {
        self.bins.pow(self.d as u32)
    }
}

fn histogram_tv(ca: &[usize], cb: &[usize], cells: usize) -> f64 {
    let mut ha = vec![0.0; cells];
    let mut hb = vec![0.0; cells];
    for &c in ca {
        ha[c] += 1.0;
    }
    for &c in cb {
        hb[c] += 1.0;
    }
    let na = ca.len() as f64;
    let nb = cb.len() as f64;
    0.5 * ha.iter().zip(&hb).map(|(a, b)| (a / na - b / nb).abs()).sum::<f64>()
}

const BOOTSTRAP_RESAMPLES: usize = 200;

/// Binned TV distance between two samples with a bootstrap standard
/// deviation. Bins are equal-width over the pooled range of each axis.
pub fn tv_histogram(a: &[Vec<f64>], b: &[Vec<f64>], bins: Bins, rng: &mut RngStream) -> Result<TvEstimate> {
    let d = a.first().or(b.first()).map(|v| v.len()).unwrap_or(1);
    if d > 3 {
        return Err(Error::DimensionTooHigh(d));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParams("both samples must be nonempty".into()));
    }
    for v in a.iter().chain(b) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    let nb = match bins {
        Bins::Auto => (a.len().max(b.len()) as f64).cbrt().ceil() as usize,
        Bins::PerAxis(k) => k,
    }
    .max(1);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for v in a.iter().chain(b) {
        for j in 0..d {
            lo[j] = lo[j].min(v[j]);
            hi[j] = hi[j].max(v[j]);
        }
    }
    let width: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (h - l) / nb as f64).collect();
    let grid = Grid { d, bins: nb, lo, width };
    let ca: Vec<usize> = a.iter().map(|v| grid.cell(v)).collect();
    let cb: Vec<usize> = b.iter().map(|v| grid.cell(v)).collect();
    let cells = grid.cells();
    let tv = histogram_tv(&ca, &cb, cells);

    let mut reps = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut ra = vec![0usize; ca.len()];
    let mut rb = vec![0usize; cb.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for x in ra.iter_mut() {
            *x = ca[rng.below(ca.len())];
        }
        for x in rb.iter_mut() {
            *x = cb[rng.below(cb.len())];
        }
        reps.push(histogram_tv(&ra, &rb, cells));
    }
    let mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let var = reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
    Ok(TvEstimate {
        tv,
        boot_sigma: var.sqrt(),
        bins_per_axis: nb,
    })
}

/// `ln f_{z₁}(t) − ln f_T(t)` where `z₁` is a sphere coordinate in ℝ^{n₂}
/// and `T = ratio·z₁`.
pub fn scaled_projection_log_ratio(t: f64, ratio: f64, n2: usize) -> Result<f64> {
    if !(ratio > 0.0) || n2 < 3 {
        return Err(Error::InvalidParams("need ratio > 0 and n2 >= 3".into()));
    }
    if !(t.abs() < 1.0f64.min(ratio)) {
        return Err(Error::OutOfSupport);
    }
    let u = t / ratio;
    let e = (n2 as f64 - 3.0) / 2.0;
    Ok(ratio.ln() + e * ((-t * t).ln_1p() - (-u * u).ln_1p()))
}

/// `½ ln det(M⁻¹) + ((n₂−d−2)/2)·ln((1−‖s‖²)/(1−sᵀMs))` with `s = U t`.
pub fn t_density_log_ratio(t: &[f64], m: &Matrix, u: &Matrix, n2: usize, d: usize) -> Result<f64> {
    if t.len() != d || m.nrows() != d || u.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: t.len(),
        });
    }
    if n2 < d + 2 {
        return Err(Error::InvalidParams("need n2 >= d + 2".into()));
    }
    let s = u * Vector::from_column_slice(t);
    let s2 = s.norm_squared();
    let sms = (s.transpose() * m * &s)[(0, 0)];
    let t2: f64 = t.iter().map(|x| x * x).sum();
    if !(t2 < 1.0 && sms < 1.0) {
        return Err(Error::OutOfSupport);
    }
    let e = (n2 as f64 - d as f64 - 2.0) / 2.0;
    Ok(-0.5 * log_det_pd(m)? + e * ((-s2).ln_1p() - (-sms).ln_1p()))
}

/// `((n₂−d−2)/2)·ln((1−‖t‖²)/(1−‖t−ℓ‖²))`
pub fn shift_log_ratio(t: &[f64], ell: &[f64], n2: usize, d: usize) -> Result<f64> {
    if t.len() != d || ell.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: t.len(),
        });
    }
    let t2: f64 = t.iter().map(|x| x * x).sum();
    let s2: f64 = t.iter().zip(ell).map(|(a, b)| (a - b) * (a - b)).sum();
    if !(t2 < 1.0 && s2 < 1.0) {
        return Err(Error::OutOfSupport);
    }
    let e = (n2 as f64 - d as f64 - 2.0) / 2.0;
    Ok(e * ((-t2).ln_1p() - (-s2).ln_1p()))
}

/// One-sample Kolmogorov–Smirnov statistic `supₓ |F̂ₙ(x) − F(x)|`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.total_cmp(q));
    xb.sort_by(|p, q| p.total_cmp(q));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic p-value `P(√n·D > λ)` of the Kolmogorov distribution, with
/// the small-sample correction `λ = (√n + 0.12 + 0.11/√n)·D`.
pub fn kolmogorov_pvalue(d: f64, n_eff: f64) -> f64 {
    let sn = n_eff.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_densities_have_zero_divergence() {
        let p = Density1D::normal(0.3, 1.7);
        for eps in [0.0, 0.5, 2.0] {
            assert!(hockey_stick_1d(&p, &p, eps).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_pair_tv() {
        let p = Density1D::uniform(0.0, 1.0);
        let q = Density1D::uniform(0.0, 2.0);
        assert!((hockey_stick_1d(&p, &q, 0.0).unwrap() - 0.5).abs() < 1e-10);
        assert!((tv_1d(&p, &q).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn shifted_normals_closed_form() {
        // D_{e^ε}(N(0,1)‖N(μ,1)) = Φ(−ε/μ + μ/2) − e^ε Φ(−ε/μ − μ/2).
        use statrs::distribution::{ContinuousCDF, Normal};
        let phi = Normal::new(0.0, 1.0).unwrap();
        let (mu, eps) = (1.3f64, 0.4f64);
        let expect = phi.cdf(-eps / mu + mu / 2.0) - eps.exp() * phi.cdf(-eps / mu - mu / 2.0);
        let got = hockey_stick_1d(&Density1D::normal(0.0, 1.0), &Density1D::normal(mu, 1.0), eps).unwrap();
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn sphere_coordinate_n3_is_uniform() {
        let d = ProjectedSphereDensity::new(3, 1);
        for x in [-0.9, -0.2, 0.0, 0.5, 0.99] {
            assert!((d.log_pdf(&[x]).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_density_normalized() {
        for n in [4usize, 7, 30] {
            let m = total_mass(&Density1D::sphere_coordinate(n)).unwrap();
            assert!((m - 1.0).abs() < 1e-9, "n={n}: {m}");
        }
    }

    #[test]
    fn scaled_projection_examples() {
        assert_eq!(scaled_projection_log_ratio(0.3, 1.0, 50).unwrap(), 0.0);
        assert!((scaled_projection_log_ratio(0.0, 1.3, 9).unwrap() - 1.3f64.ln()).abs() < 1e-15);
        let r = 1.1f64;
        let expect = r.ln() + (0.75f64 / (1.0 - (0.5 / r).powi(2))).ln();
        assert!((scaled_projection_log_ratio(0.5, r, 5).unwrap() - expect).abs() < 1e-12);
        assert_eq!(scaled_projection_log_ratio(0.95, 0.9, 5).unwrap_err(), Error::OutOfSupport);
    }

    #[test]
    fn t_density_reduces_to_projection_in_1d() {
        let m = Matrix::from_element(1, 1, 0.87);
        let u = Matrix::identity(1, 1);
        for t in [-0.6, 0.1, 0.8] {
            let a = t_density_log_ratio(&[t], &m, &u, 40, 1).unwrap();
            let b = scaled_projection_log_ratio(t, 1.0 / 0.87f64.sqrt(), 40).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
        let eye = Matrix::identity(2, 2);
        assert_eq!(t_density_log_ratio(&[0.3, 0.4], &eye, &eye, 10, 2).unwrap(), 0.0);
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift_log_ratio(&[0.2, 0.1], &[0.0, 0.0], 30, 2).unwrap(), 0.0);
        assert!(shift_log_ratio(&[0.5, 0.0], &[0.0, 0.01], 30, 2).unwrap() > 0.0);
    }

    #[test]
    fn triangle_examples() {
        let p = [0.2, 0.3, 0.5];
        assert!(weak_triangle_check(&p, &p, &p, 0.3, 0.2).unwrap());
        let q = [0.5, 0.4, 0.1];
        let r = [0.3, 0.3, 0.4];
        assert!(weak_triangle_check(&p, &q, &r, 0.0, 0.0).unwrap());
        assert!(matches!(
            weak_triangle_check(&p, &q[..2], &r, 0.0, 0.0),
            Err(Error::SupportMismatch(3, 2))
        ));
    }

    #[test]
    fn tv_histogram_guards() {
        let mut rng = RngStream::new(0, 0);
        let a: Vec<Vec<f64>> = (0..2000).map(|i| vec![(i % 37) as f64]).collect();
        let t = tv_histogram(&a, &a, Bins::Auto, &mut rng).unwrap();
        assert_eq!(t.tv, 0.0);
        let four = vec![vec![0.0; 4]; 10];
        assert_eq!(tv_histogram(&four, &four, Bins::Auto, &mut rng).unwrap_err(), Error::DimensionTooHigh(4));
    }

    #[test]
    fn ks_helpers() {
        let u: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!((ks_statistic(&u, |x| x) - 0.0005).abs() < 1e-12);
        assert_eq!(ks_two_sample(&u, &u), 0.0);
        assert!((kolmogorov_pvalue(1.36 / 1000f64.sqrt(), 1000.0) - 0.05).abs() < 0.005);
        assert!(kolmogorov_pvalue(0.5, 1000.0) < 1e-100);
    }
}
