//! Dense linear algebra for small d: decompositions, norms, Mahalanobis
//! geometry and Loewner-order checks.
//!
//! Decompositions are delegated to `nalgebra`; this module adds the
//! conventions the estimators depend on (descending order, the relative
//! singularity threshold, infinite norms for singular metrics).

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigen/singular values at or below this fraction of the largest one are
/// treated as zero.
pub const SINGULAR_REL_TOL: f64 = 1e-12;

/// Relative asymmetry accepted by `spectral_decomp`.
pub const SYMMETRY_REL_TOL: f64 = 1e-10;

/// Slack applied to Loewner-order comparisons.
pub const PSD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    /// Orthogonal matrix whose columns are eigenvectors.
    pub eigvecs: Matrix,
    /// Eigenvalues in descending order.
    pub eigvals: Vec<f64>,
}

impl SpectralDecomp {
    pub fn reconstruct(&self) -> Matrix {
        let lam = Matrix::from_diagonal(&Vector::from_column_slice(&self.eigvals));
        &self.eigvecs * lam * self.eigvecs.transpose()
    }

    pub fn min_eig(&self) -> f64 {
        *self.eigvals.last().unwrap_or(&0.0)
    }

    pub fn max_eig(&self) -> f64 {
        *self.eigvals.first().unwrap_or(&0.0)
    }

    /// Apply `f` to the eigenvalues and rebuild `U f(Λ) Uᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let lam: Vec<f64> = self.eigvals.iter().map(|&x| f(x)).collect();
        let lam = Matrix::from_diagonal(&Vector::from_vec(lam));
        &self.eigvecs * lam * self.eigvecs.transpose()
    }

    /// True when the smallest eigenvalue is zero under the relative
    /// threshold (or the matrix is identically zero).
    pub fn is_singular(&self) -> bool {
        let top = self.max_eig();
        top <= 0.0 || self.min_eig() <= SINGULAR_REL_TOL * top
    }
}

/// Thin singular value decomposition `a = U diag(s) Vᵀ` with
/// `r = min(rows, cols)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub left: Matrix,
    pub singvals: Vec<f64>,
    pub right: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let s = Matrix::from_diagonal(&Vector::from_column_slice(&self.singvals));
        &self.left * s * self.right.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    pub spectral: f64,
    pub frobenius: f64,
    pub trace_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceGap {
    /// `‖A − I‖_tr`
    pub gap: f64,
    /// `‖A⁻¹ − I‖_tr`
    pub inv_gap: f64,
}

fn check_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn check_square(a: &Matrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        })
    }
}

/// Largest `|a_ij − a_ji|` relative to `max(1, max |a_ij|)`.
pub fn asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn spectral_decomp(a: &Matrix) -> Result<SpectralDecomp> {
    check_square(a)?;
    check_finite(a)?;
    let asym = asymmetry(a);
    if asym > SYMMETRY_REL_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let n = a.nrows();
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut eigvecs = Matrix::zeros(n, n);
    let mut eigvals = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        eigvals.push(eig.eigenvalues[src]);
        let v = eig.eigenvectors.column(src);
        // Sign convention: the largest-magnitude component is positive.
        let mut pivot = 0;
        for r in 0..n {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            eigvecs[(r, col)] = sign * v[r];
        }
    }
    Ok(SpectralDecomp { eigvecs, eigvals })
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    check_finite(a)?;
    let r = a.nrows().min(a.ncols());
    let dec = SVD::new(a.clone(), true, true);
    let u = dec.u.expect("requested U");
    let v = dec.v_t.expect("requested Vᵀ").transpose();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));
    let mut left = Matrix::zeros(a.nrows(), r);
    let mut right = Matrix::zeros(a.ncols(), r);
    let mut singvals = Vec::with_capacity(r);
    for (col, &src) in order.iter().enumerate() {
        singvals.push(dec.singular_values[src].max(0.0));
        left.set_column(col, &u.column(src));
        right.set_column(col, &v.column(src));
    }
    Ok(Svd {
        left,
        singvals,
        right,
    })
}

pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    check_finite(a)?;
    let mut s: Vec<f64> = a.singular_values().iter().map(|x| x.max(0.0)).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

pub fn matrix_norms(a: &Matrix) -> Result<MatrixNorms> {
    let s = singular_values(a)?;
    Ok(MatrixNorms {
        spectral: s.first().copied().unwrap_or(0.0),
        frobenius: s.iter().map(|x| x * x).sum::<f64>().sqrt(),
        trace_norm: s.iter().sum(),
    })
}

/// Precomputed map `v ↦ Λ^{-1/2} Uᵀ v` for a positive definite `Σ = UΛUᵀ`,
/// so that `‖v‖²_Σ = ‖whiten(v)‖²`. `None` stands for a singular metric,
/// under which every vector has infinite norm.
#[derive(Debug, Clone)]
pub struct Whitener {
    d: usize,
    /// Row-major `d×d` transform, `None` when singular.
    transform: Option<Vec<f64>>,
}

impl Whitener {
    pub fn new(sigma: &Matrix) -> Result<Self> {
        let d = sigma.nrows();
        let dec = spectral_decomp(sigma)?;
        if dec.is_singular() {
            return Ok(Whitener { d, transform: None });
        }
        let mut t = vec![0.0; d * d];
        for k in 0..d {
            let s = 1.0 / dec.eigvals[k].sqrt();
            for j in 0..d {
                t[k * d + j] = s * dec.eigvecs[(j, k)];
            }
        }
        Ok(Whitener {
            d,
            transform: Some(t),
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut t = vec![0.0; d * d];
        for k in 0..d {
            t[k * d + k] = 1.0;
        }
        Whitener {
            d,
            transform: Some(t),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_singular(&self) -> bool {
        self.transform.is_none()
    }

    /// Writes the whitened vector into `out`; returns false for a singular
    /// metric.
    pub fn whiten_into(&self, v: &[f64], out: &mut [f64]) -> bool {
        let Some(t) = &self.transform else {
            return false;
        };
        let d = self.d;
        for k in 0..d {
            let row = &t[k * d..(k + 1) * d];
            out[k] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        true
    }

    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        let Some(t) = &self.transform else {
            return f64::INFINITY;
        };
        let d = self.d;
        let mut acc = 0.0;
        for k in 0..d {
            let row = &t[k * d..(k + 1) * d];
            let s: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            acc += s * s;
        }
        acc
    }
}

/// `vᵀ Σ⁻¹ v`, or `+∞` when `Σ` is singular.
pub fn mahalanobis_sq(v: &[f64], sigma: &Matrix) -> Result<f64> {
    check_square(sigma)?;
    if v.len() != sigma.nrows() {
        return Err(Error::DimensionMismatch {
            expected: sigma.nrows(),
            got: v.len(),
        });
    }
    Ok(Whitener::new(sigma)?.norm_sq(v))
}

/// Symmetric PSD square root; negative rounding noise in eigenvalues is
/// clipped to zero.
pub fn sym_sqrt(a: &Matrix) -> Result<Matrix> {
    Ok(spectral_decomp(a)?.map(|x| x.max(0.0).sqrt()))
}

fn require_pd(dec: &SpectralDecomp) -> Result<()> {
    if dec.min_eig() <= 0.0 || dec.is_singular() {
        Err(Error::NotPd(dec.min_eig()))
    } else {
        Ok(())
    }
}

pub fn sym_inv_sqrt(a: &Matrix) -> Result<Matrix> {
    let dec = spectral_decomp(a)?;
    require_pd(&dec)?;
    Ok(dec.map(|x| 1.0 / x.sqrt()))
}

pub fn sym_inverse(a: &Matrix) -> Result<Matrix> {
    let dec = spectral_decomp(a)?;
    require_pd(&dec)?;
    Ok(dec.map(|x| 1.0 / x))
}

/// Eigenvalues (descending) of `S₁^{-1/2} S₂ S₁^{-1/2}`.
pub fn relative_eigs(s1: &Matrix, s2: &Matrix) -> Result<Vec<f64>> {
    if s1.shape() != s2.shape() {
        return Err(Error::DimensionMismatch {
            expected: s1.nrows(),
            got: s2.nrows(),
        });
    }
    let d2 = spectral_decomp(s2)?;
    require_pd(&d2)?;
    let h = sym_inv_sqrt(s1)?;
    let c = symmetrize(&(&h * s2 * &h));
    Ok(spectral_decomp(&c)?.eigvals)
}

/// `(1−γ)S₁ ⪯ S₂ ⪯ S₁/(1−γ)`, decided on the conjugate
/// `S₁^{-1/2} S₂ S₁^{-1/2}` with slack `PSD_SLACK`.
pub fn psd_sandwich_check(s1: &Matrix, s2: &Matrix, gamma: f64) -> Result<bool> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParams(format!("gamma {gamma} not in [0,1)")));
    }
    let eig = relative_eigs(s1, s2)?;
    let lo = *eig.last().unwrap();
    let hi = eig[0];
    Ok(lo >= (1.0 - gamma) - PSD_SLACK && hi <= 1.0 / (1.0 - gamma) + PSD_SLACK)
}

pub fn inverse_tracenorm_gap(a: &Matrix) -> Result<TraceGap> {
    let dec = spectral_decomp(a)?;
    if dec.min_eig() < 1.0 - PSD_SLACK {
        return Err(Error::PreconditionViolated(format!(
            "A must dominate I, min eigenvalue {}",
            dec.min_eig()
        )));
    }
    // A − I and A⁻¹ − I are symmetric; their trace norms are sums of
    // absolute eigenvalues.
    let gap = dec.eigvals.iter().map(|x| (x - 1.0).abs()).sum();
    let inv_gap = dec.eigvals.iter().map(|x| (1.0 / x - 1.0).abs()).sum();
    Ok(TraceGap { gap, inv_gap })
}

/// `‖S₁^{-1/2} S₂ S₁^{-1/2} − I‖_tr`.
pub fn relative_tracenorm(s1: &Matrix, s2: &Matrix) -> Result<f64> {
    Ok(relative_eigs(s1, s2)?.iter().map(|x| (x - 1.0).abs()).sum())
}

pub fn log_det_pd(a: &Matrix) -> Result<f64> {
    let dec = spectral_decomp(a)?;
    require_pd(&dec)?;
    Ok(dec.eigvals.iter().map(|x| x.ln()).sum())
}
