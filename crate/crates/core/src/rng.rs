//! Seeded, splittable randomness.
//!
//! An `RngStream` is a ChaCha8 generator keyed by `seed` and positioned on
//! ChaCha's independent `stream_id`. Two runs handed the same
//! `(seed, stream_id)` consume identical random bits, which is how the audit
//! harness couples executions on adjacent datasets.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream determined by `(seed, stream_id, tag)` only; the
    /// parent's position is irrelevant and left untouched.
    pub fn derive(&self, tag: u64) -> RngStream {
        let key = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_F42D)));
        RngStream::new(key, tag)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..hi)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn fill_normals(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.normal();
        }
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_normals(&mut v);
        v
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `mean + cov_sqrt · g` with `g` standard normal.
pub fn gaussian_vector(rng: &mut RngStream, mean: &[f64], cov_sqrt: &Matrix) -> Result<Vec<f64>> {
    let d = mean.len();
    if cov_sqrt.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov_sqrt.nrows(),
        });
    }
    if !cov_sqrt.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let g = Vector::from_vec(rng.normals(cov_sqrt.ncols()));
    let noise = cov_sqrt * g;
    Ok(mean.iter().zip(noise.iter()).map(|(m, e)| m + e).collect())
}

/// Uniform point on the unit sphere in ℝⁿ (normalized Gaussian).
pub fn unit_sphere(rng: &mut RngStream, n: usize) -> Vec<f64> {
    assert!(n >= 1, "sphere dimension must be positive");
    loop {
        let mut v = rng.normals(n);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for x in v.iter_mut() {
                *x /= norm;
            }
            return v;
        }
    }
}

/// Uniform `m`-subset of `{0, …, n−1}` by partial Fisher–Yates, sorted.
pub fn uniform_subset(rng: &mut RngStream, n: usize, m: usize) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::SubsetTooLarge { n, m });
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.range(i, n);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool.sort_unstable();
    Ok(pool)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of R's diagonal folded into Q.
pub fn random_rotation(rng: &mut RngStream, d: usize) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_bits() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        assert_eq!(a.normals(16), b.normals(16));
        let mut c = RngStream::new(7, 4);
        assert_ne!(RngStream::new(7, 3).normals(4), c.normals(4));
    }

    #[test]
    fn derive_ignores_parent_position() {
        let mut a = RngStream::new(1, 2);
        let child_before = a.derive(5).normals(3);
        a.normals(10);
        assert_eq!(child_before, a.derive(5).normals(3));
        assert_ne!(a.derive(5).normals(3), a.derive(6).normals(3));
    }

    #[test]
    fn zero_cov_sqrt_returns_mean() {
        let mut rng = RngStream::new(0, 0);
        let z = gaussian_vector(&mut rng, &[1.5, -2.0], &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(z, vec![1.5, -2.0]);
        assert!(matches!(
            gaussian_vector(&mut rng, &[0.0], &Matrix::zeros(2, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_mean_clt() {
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let eye = Matrix::identity(1, 1);
        let mut s = 0.0;
        for _ in 0..n {
            s += gaussian_vector(&mut rng, &[0.0], &eye).unwrap()[0];
        }
        assert!((s / n as f64).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn zero_sphere() {
        let mut rng = RngStream::new(3, 1);
        for _ in 0..20 {
            let v = unit_sphere(&mut rng, 1);
            assert!(v[0] == 1.0 || v[0] == -1.0);
        }
    }

    #[test]
    fn subset_shapes() {
        let mut rng = RngStream::new(5, 5);
        assert_eq!(uniform_subset(&mut rng, 3, 3).unwrap(), vec![0, 1, 2]);
        let s = uniform_subset(&mut rng, 10, 4).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.windows(2).all(|w| w[0] < w[1]) && s[3] < 10);
        assert!(matches!(
            uniform_subset(&mut rng, 2, 3),
            Err(Error::SubsetTooLarge { n: 2, m: 3 })
        ));
    }

    #[test]
    fn singleton_subset_frequencies() {
        let mut rng = RngStream::new(9, 0);
        let mut counts = [0usize; 5];
        let trials = 100_000;
        for _ in 0..trials {
            counts[uniform_subset(&mut rng, 5, 1).unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / trials as f64 - 0.2).abs() < 0.01);
        }
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = RngStream::new(2, 2);
        let q = random_rotation(&mut rng, 5);
        assert!((q.transpose() * &q - Matrix::identity(5, 5)).norm() < 1e-12);
    }
}
