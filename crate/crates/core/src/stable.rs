//! Stable covariance and mean estimators with soft outlier removal.
//!
//! Both estimators sweep an outlier filter over `2k+1` discretized
//! thresholds. Points that survive many thresholds get more weight, and
//! an integer `score` measures how far the data is from having every
//! point survive.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Matrix, Whitener};

pub const E2: f64 = std::f64::consts::E * std::f64::consts::E;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Outlier threshold on squared Mahalanobis norms.
    pub lambda0: f64,
    /// Discretization parameter.
    pub k: usize,
    /// `λ_core = core_factor · λ₀` is the distance cap used by the mean
    /// estimator's neighborhood filter.
    pub core_factor: f64,
}

impl EstimatorConfig {
    pub fn new(lambda0: f64, k: usize) -> Result<Self> {
        let cfg = EstimatorConfig {
            lambda0,
            k,
            core_factor: E2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_core_factor(mut self, core_factor: f64) -> Self {
        self.core_factor = core_factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 1.0) || !self.lambda0.is_finite() {
            return Err(Error::InvalidParams(format!(
                "lambda0 must be >= 1, got {}",
                self.lambda0
            )));
        }
        if self.k < 5 {
            return Err(Error::InvalidParams(format!("k must be >= 5, got {}", self.k)));
        }
        if !(self.core_factor > 0.0) {
            return Err(Error::InvalidParams("core_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda_core(&self) -> f64 {
        self.core_factor * self.lambda0
    }

    /// Covariance thresholds `e^{ℓ/k} λ₀`, `ℓ = 0..=2k`.
    pub fn cov_thresholds(&self) -> Vec<f64> {
        (0..=2 * self.k)
            .map(|l| (l as f64 / self.k as f64).exp() * self.lambda0)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct WeightedCovOutput {
    /// `d×m`, column `i` is `√wᵢ · Yᵢ`.
    pub w: Matrix,
    pub weights: Vec<f64>,
    /// `#{ℓ ∈ k+1..=2k : i ∈ S_ℓ}`; `weights[i] = counts[i] / (k·m)`.
    pub counts: Vec<u32>,
    /// `|S_ℓ|` for `ℓ = 0..=2k`.
    pub subset_sizes: Vec<usize>,
    pub score: usize,
    /// `Σ̂ = W Wᵀ`
    pub sigma_hat: Matrix,
}

impl WeightedCovOutput {
    pub fn uniform(&self) -> bool {
        let k = (self.subset_sizes.len() - 1) / 2;
        self.counts.iter().all(|&c| c as usize == k)
    }
}

#[derive(Debug, Clone)]
pub struct WeightVectorOutput {
    pub weights: Vec<f64>,
    /// `cᵢ = #{ℓ ∈ k+1..=2k : i ∈ S_ℓ}`
    pub counts: Vec<u32>,
    /// `Z = Σ cᵢ`
    pub total: u64,
    pub subset_sizes: Vec<usize>,
    pub score: usize,
    /// Set when `|R| ≤ 6k`, below what the stability guarantee needs.
    pub small_reference: bool,
}

impl WeightVectorOutput {
    pub fn uniform(&self) -> bool {
        let k = (self.subset_sizes.len() - 1) / 2;
        self.counts.iter().all(|&c| c as usize == k)
    }
}

/// `Yᵢ = (Xᵢ − X_{i+m})/√2` for a block of `2m` rows.
pub fn pair_and_rescale(x: &Dataset) -> Result<Dataset> {
    if x.n() % 2 != 0 {
        return Err(Error::OddRowCount(x.n()));
    }
    let m = x.n() / 2;
    let d = x.d();
    let mut values = Vec::with_capacity(m * d);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..m {
        for (a, b) in x.row(i).iter().zip(x.row(i + m)) {
            values.push((a - b) * s);
        }
    }
    Dataset::new(m, d, values)
}

/// `(1/m) Σ_{j ∈ S} Yⱼ Yⱼᵀ`, with `m` the full row count.
fn second_moment(y: &Dataset, keep: &[bool]) -> Matrix {
    let d = y.d();
    let mut a = Matrix::zeros(d, d);
    for (j, &kept) in keep.iter().enumerate() {
        if !kept {
            continue;
        }
        let r = y.row(j);
        for p in 0..d {
            let rp = r[p];
            for q in p..d {
                a[(p, q)] += rp * r[q];
            }
        }
    }
    let m = y.n() as f64;
    for p in 0..d {
        for q in p..d {
            a[(p, q)] /= m;
            a[(q, p)] = a[(p, q)];
        }
    }
    a
}

/// Squared norms `‖A^{-1/2} Yᵢ‖²` for kept points under the current `A`,
/// or `None` when `A` is singular.
fn good_subset_norms(y: &Dataset, keep: &[bool]) -> Result<Option<Vec<f64>>> {
    let a = second_moment(y, keep);
    let wh = Whitener::new(&a)?;
    if wh.is_singular() {
        return Ok(None);
    }
    Ok(Some(
        (0..y.n())
            .map(|i| if keep[i] { wh.norm_sq(y.row(i)) } else { 0.0 })
            .collect(),
    ))
}

/// Iterate the filter from `keep` until nothing is removed.
fn good_subset_from(y: &Dataset, lambda: f64, mut keep: Vec<bool>, first: Option<&Option<Vec<f64>>>) -> Result<Vec<bool>> {
    let mut cached = first;
    for _ in 0..=y.n() + 1 {
        let owned;
        let norms = match cached.take() {
            Some(n) => n,
            None => {
                owned = good_subset_norms(y, &keep)?;
                &owned
            }
        };
        let Some(norms) = norms else {
            return Ok(vec![false; y.n()]);
        };
        let mut removed = false;
        for i in 0..y.n() {
            if keep[i] && norms[i] > lambda {
                keep[i] = false;
                removed = true;
            }
        }
        if !removed {
            return Ok(keep);
        }
        if !keep.iter().any(|&b| b) {
            return Ok(keep);
        }
    }
    unreachable!("each pass removes a point or terminates")
}

fn mask_to_indices(keep: &[bool]) -> Vec<usize> {
    keep.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Repeatedly drop points with `‖A^{-1/2}Yᵢ‖² > λ`, where
/// `A = (1/m) Σ_{j∈S} YⱼYⱼᵀ` is recomputed over the survivors. A singular
/// `A` removes every remaining point.
pub fn largest_good_subset(y: &Dataset, lambda: f64) -> Result<Vec<usize>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")));
    }
    let keep = good_subset_from(y, lambda, vec![true; y.n()], None)?;
    Ok(mask_to_indices(&keep))
}

/// Good subsets at every threshold, sharing the first pass (which is the
/// same for all thresholds because every sweep starts from the full set).
fn good_subset_sweep(y: &Dataset, thresholds: &[f64]) -> Result<Vec<Vec<bool>>> {
    let full = vec![true; y.n()];
    let first = good_subset_norms(y, &full)?;
    thresholds
        .iter()
        .map(|&lam| good_subset_from(y, lam, full.clone(), Some(&first)))
        .collect()
}

pub fn stable_cov(x: &Dataset, cfg: &EstimatorConfig) -> Result<WeightedCovOutput> {
    cfg.validate()?;
    let y = pair_and_rescale(x)?;
    stable_cov_paired(&y, cfg)
}

/// `stable_cov` on already paired vectors `Y`.
pub fn stable_cov_paired(y: &Dataset, cfg: &EstimatorConfig) -> Result<WeightedCovOutput> {
    let m = y.n();
    let d = y.d();
    if m == 0 {
        return Err(Error::InvalidParams("need at least one pair".into()));
    }
    let k = cfg.k;
    let subsets = good_subset_sweep(y, &cfg.cov_thresholds())?;
    let subset_sizes: Vec<usize> = subsets.iter().map(|s| s.iter().filter(|&&b| b).count()).collect();

    let score = (0..=k)
        .map(|l| m - subset_sizes[l] + l)
        .min()
        .unwrap()
        .min(k);

    let mut counts = vec![0u32; m];
    for s in &subsets[k + 1..=2 * k] {
        for (c, &kept) in counts.iter_mut().zip(s) {
            *c += kept as u32;
        }
    }
    let denom = (k * m) as f64;
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / denom).collect();

    let mut w = Matrix::zeros(d, m);
    let mut sigma_hat = Matrix::zeros(d, d);
    for i in 0..m {
        if counts[i] == 0 {
            continue;
        }
        let r = y.row(i);
        let s = weights[i].sqrt();
        for p in 0..d {
            w[(p, i)] = s * r[p];
        }
        for p in 0..d {
            for q in p..d {
                sigma_hat[(p, q)] += weights[i] * r[p] * r[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            sigma_hat[(p, q)] = sigma_hat[(q, p)];
        }
    }
    Ok(WeightedCovOutput {
        w,
        weights,
        counts,
        subset_sizes,
        score,
        sigma_hat: symmetrize(&sigma_hat),
    })
}

fn check_reference(n: usize, r: &[usize]) -> Result<()> {
    if r.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    if let Some(&bad) = r.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidParams(format!(
            "reference index {bad} out of range for {n} points"
        )));
    }
    Ok(())
}

fn whiten_all(x: &Dataset, wh: &Whitener) -> Option<Vec<f64>> {
    let d = x.d();
    let mut z = vec![0.0; x.n() * d];
    for i in 0..x.n() {
        if !wh.whiten_into(x.row(i), &mut z[i * d..(i + 1) * d]) {
            return None;
        }
    }
    Some(z)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `|Nᵢ|` with `Nᵢ = {j ∈ R : ‖Xᵢ − Xⱼ‖²_Σ̂ ≤ λ}` for every `i`. Under a
/// singular `Σ̂` all distances are infinite and every degree is 0.
pub fn reference_degrees(x: &Dataset, sigma_hat: &Matrix, lambda: f64, r: &[usize]) -> Result<Vec<usize>> {
    check_reference(x.n(), r)?;
    if sigma_hat.nrows() != x.d() {
        return Err(Error::DimensionMismatch {
            expected: x.d(),
            got: sigma_hat.nrows(),
        });
    }
    let wh = Whitener::new(sigma_hat)?;
    Ok(degrees_whitened(x, &wh, lambda, r))
}

fn degrees_whitened(x: &Dataset, wh: &Whitener, lambda: f64, r: &[usize]) -> Vec<usize> {
    let d = x.d();
    let Some(z) = whiten_all(x, wh) else {
        return vec![0; x.n()];
    };
    let refs: Vec<&[f64]> = r.iter().map(|&j| &z[j * d..(j + 1) * d]).collect();
    (0..x.n())
        .map(|i| {
            let zi = &z[i * d..(i + 1) * d];
            refs.iter().filter(|zj| sq_dist(zi, zj) <= lambda).count()
        })
        .collect()
}

/// `{i : |Nᵢ| ≥ τ}`, one shot.
pub fn largest_core(x: &Dataset, sigma_hat: &Matrix, lambda: f64, tau: usize, r: &[usize]) -> Result<Vec<usize>> {
    let deg = reference_degrees(x, sigma_hat, lambda, r)?;
    Ok((0..x.n()).filter(|&i| deg[i] >= tau).collect())
}

/// All-pairs neighborhood structure under a fixed metric and cap, stored as
/// bitsets so that degrees against many reference sets are cheap.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl NeighborGraph {
    pub fn new(x: &Dataset, sigma_hat: &Matrix, lambda: f64) -> Result<Self> {
        let n = x.n();
        let d = x.d();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];
        let wh = Whitener::new(sigma_hat)?;
        if let Some(z) = whiten_all(x, &wh) {
            for i in 0..n {
                let zi = &z[i * d..(i + 1) * d];
                for j in 0..n {
                    if sq_dist(zi, &z[j * d..(j + 1) * d]) <= lambda {
                        bits[i * words + j / 64] |= 1u64 << (j % 64);
                    }
                }
            }
        }
        Ok(NeighborGraph { n, words, bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Degrees of every point against reference set `r`.
    pub fn degrees(&self, r: &[usize]) -> Result<Vec<usize>> {
        check_reference(self.n, r)?;
        let mut mask = vec![0u64; self.words];
        for &j in r {
            mask[j / 64] |= 1u64 << (j % 64);
        }
        Ok((0..self.n)
            .map(|i| {
                let row = &self.bits[i * self.words..(i + 1) * self.words];
                row.iter().zip(&mask).map(|(a, b)| (a & b).count_ones() as usize).sum()
            })
            .collect())
    }

    /// Degrees against all points (`|R| = n`).
    pub fn full_degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                self.bits[i * self.words..(i + 1) * self.words]
                    .iter()
                    .map(|w| w.count_ones() as usize)
                    .sum()
            })
            .collect()
    }
}

/// Weights and score from reference degrees: `S_ℓ = {i : degᵢ ≥ |R| − ℓ}`.
pub fn mean_weights_from_degrees(deg: &[usize], r_len: usize, k: usize) -> WeightVectorOutput {
    let n = deg.len();
    let subset_sizes: Vec<usize> = (0..=2 * k)
        .map(|l| {
            let tau = r_len.saturating_sub(l);
            deg.iter().filter(|&&g| g >= tau).count()
        })
        .collect();
    let score = (0..=k)
        .map(|l| n - subset_sizes[l] + l)
        .min()
        .unwrap()
        .min(k);
    let counts: Vec<u32> = deg
        .iter()
        .map(|&g| {
            (k + 1..=2 * k)
                .filter(|&l| g >= r_len.saturating_sub(l))
                .count() as u32
        })
        .collect();
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    let weights = if total == 0 {
        vec![0.0; n]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    WeightVectorOutput {
        weights,
        counts,
        total,
        subset_sizes,
        score,
        small_reference: r_len <= 6 * k,
    }
}

pub fn stable_mean(x: &Dataset, sigma_hat: &Matrix, cfg: &EstimatorConfig, r: &[usize]) -> Result<WeightVectorOutput> {
    cfg.validate()?;
    let deg = reference_degrees(x, sigma_hat, cfg.lambda_core(), r)?;
    Ok(mean_weights_from_degrees(&deg, r.len(), cfg.k))
}

/// Degree-representativeness of `r` for `x` under metric `sigma` and
/// distance cap `lambda`: every point's neighbor fraction in `r` is within
/// 1/6 of its neighbor fraction in the whole block.
pub fn degree_representative(x: &Dataset, sigma: &Matrix, lambda: f64, r: &[usize]) -> Result<bool> {
    let graph = NeighborGraph::new(x, sigma, lambda)?;
    let full = graph.full_degrees();
    let part = graph.degrees(r)?;
    let n = x.n() as f64;
    let m = r.len() as f64;
    Ok(full
        .iter()
        .zip(&part)
        .all(|(&z, &zr)| (zr as f64 / m - z as f64 / n).abs() <= 1.0 / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Dataset {
        Dataset::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn pairing_examples() {
        let y = pair_and_rescale(&col(&[2.0, 0.0])).unwrap();
        assert!((y.row(0)[0] - 2f64.sqrt()).abs() < 1e-15);
        let y = pair_and_rescale(&col(&[3.0, 3.0, 3.0, 3.0])).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
        let x = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let y = pair_and_rescale(&x).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(y.row(0), &[h, 0.0]);
        assert_eq!(y.row(1), &[0.0, h]);
        assert_eq!(pair_and_rescale(&col(&[1.0, 2.0, 3.0])).unwrap_err(), Error::OddRowCount(3));
    }

    #[test]
    fn good_subset_single_pass() {
        // A = (1 + 9)/2 = 5, norms 0.2 and 1.8.
        assert_eq!(largest_good_subset(&col(&[1.0, 3.0]), 2.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn good_subset_cascade() {
        // Pass 1: A = (1 + 10⁶)/2, norm of 1000 is ≈ 2 > 1. Pass 2 keeps
        // dividing by m = 2: A = 1/2, norm of 1 is 2 > 1.
        assert!(largest_good_subset(&col(&[1.0, 1000.0]), 1.0).unwrap().is_empty());
    }

    #[test]
    fn good_subset_singular() {
        assert!(largest_good_subset(&col(&[0.0, 0.0, 0.0]), 5.0).unwrap().is_empty());
    }

    #[test]
    fn stable_cov_single_pair() {
        let out = stable_cov(&col(&[1.0, -1.0]), &EstimatorConfig::new(4.0, 5).unwrap()).unwrap();
        assert_eq!(out.score, 0);
        assert_eq!(out.weights, vec![1.0]);
        assert!((out.sigma_hat[(0, 0)] - 2.0).abs() < 1e-14);
        assert!(out.subset_sizes.iter().all(|&s| s == 1));
    }

    #[test]
    fn stable_cov_degenerate() {
        let out = stable_cov(&col(&[0.0; 12]), &EstimatorConfig::new(4.0, 5).unwrap()).unwrap();
        assert!(out.subset_sizes.iter().all(|&s| s == 0));
        assert_eq!(out.score, 5);
        assert!(out.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn core_examples() {
        let x = col(&[0.0, 0.5, 10.0]);
        let one = Matrix::identity(1, 1);
        assert_eq!(largest_core(&x, &one, 1.0, 2, &[0, 1]).unwrap(), vec![0, 1]);
        assert_eq!(largest_core(&x, &one, 1.0, 0, &[0, 1]).unwrap(), vec![0, 1, 2]);
        let same = col(&[4.0; 5]);
        assert_eq!(largest_core(&same, &one, 1.0, 3, &[0, 2, 4]).unwrap().len(), 5);
        assert_eq!(largest_core(&x, &one, 1.0, 1, &[]).unwrap_err(), Error::EmptyReferenceSet);
    }

    #[test]
    fn stable_mean_all_equal() {
        let x = Dataset::from_rows(&vec![vec![2.0, -1.0]; 40]).unwrap();
        let cfg = EstimatorConfig::new(3.0, 5).unwrap();
        let r: Vec<usize> = (0..31).collect();
        let out = stable_mean(&x, &Matrix::identity(2, 2), &cfg, &r).unwrap();
        assert_eq!(out.score, 0);
        assert!(out.uniform() && !out.small_reference);
        let mu = x.weighted_sum(&out.weights);
        assert!((mu[0] - 2.0).abs() < 1e-14 && (mu[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn stable_mean_two_far_clusters() {
        // Every point sees only half of R, so no threshold with ℓ ≤ 2k
        // keeps anyone: Z = 0 and the score saturates.
        let mut v = vec![0.0; 40];
        v.extend(vec![1e6; 40]);
        let x = col(&v);
        let cfg = EstimatorConfig::new(1.0, 5).unwrap();
        let r: Vec<usize> = (20..60).collect();
        let out = stable_mean(&x, &Matrix::identity(1, 1), &cfg, &r).unwrap();
        assert_eq!(out.total, 0);
        assert!(out.weights.iter().all(|&w| w == 0.0));
        assert_eq!(out.score, 5);
    }

    #[test]
    fn graph_matches_direct_degrees() {
        let x = col(&[0.0, 0.3, 0.9, 2.0, 2.2, 5.0]);
        let s = Matrix::from_element(1, 1, 0.5);
        let g = NeighborGraph::new(&x, &s, 1.0).unwrap();
        let r = vec![1, 3, 4];
        assert_eq!(g.degrees(&r).unwrap(), reference_degrees(&x, &s, 1.0, &r).unwrap());
    }
}
