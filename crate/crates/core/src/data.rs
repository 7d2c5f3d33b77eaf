//! Row-major datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt, Matrix};
use crate::rng::{gaussian_vector, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        if values.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: values.len(),
            });
        }
        if !values.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Dataset { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Dataset::new(rows.len(), d, values)
    }

    /// `n` i.i.d. draws from `N(mean, cov)`.
    pub fn gaussian(rng: &mut RngStream, n: usize, mean: &[f64], cov: &Matrix) -> Result<Self> {
        let root = sym_sqrt(cov)?;
        Dataset::gaussian_with_root(rng, n, mean, &root)
    }

    /// Like `gaussian`, with a precomputed square root `cov = root·rootᵀ`.
    pub fn gaussian_with_root(
        rng: &mut RngStream,
        n: usize,
        mean: &[f64],
        root: &Matrix,
    ) -> Result<Self> {
        let d = mean.len();
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            values.extend(gaussian_vector(rng, mean, root)?);
        }
        Dataset::new(n, d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn set_row(&mut self, i: usize, v: &[f64]) {
        assert_eq!(v.len(), self.d);
        self.values[i * self.d..(i + 1) * self.d].copy_from_slice(v);
    }

    /// Rows `lo..hi` as a new dataset.
    pub fn slice(&self, lo: usize, hi: usize) -> Dataset {
        Dataset {
            n: hi - lo,
            d: self.d,
            values: self.values[lo * self.d..hi * self.d].to_vec(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for i in 0..self.n {
            for (a, b) in m.iter_mut().zip(self.row(i)) {
                *a += b;
            }
        }
        for a in m.iter_mut() {
            *a /= self.n as f64;
        }
        m
    }

    /// `Σᵢ wᵢ xᵢ`
    pub fn weighted_sum(&self, w: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for (i, &wi) in w.iter().enumerate() {
            if wi != 0.0 {
                for (a, b) in m.iter_mut().zip(self.row(i)) {
                    *a += wi * b;
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Dataset::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Dataset::new(1, 1, vec![f64::NAN]).is_err());
        let x = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(x.row(1), &[3.0, 4.0]);
        assert_eq!(x.mean(), vec![2.0, 3.0]);
        assert_eq!(x.slice(1, 2).row(0), &[3.0, 4.0]);
    }
}
