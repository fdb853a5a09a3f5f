//! Small dense and banded kernels used by the local solvers.

use crate::error::{Error, Result};

/// Symmetric positive-definite band matrix stored by lower diagonals.
///
/// `band[i * (bw + 1) + k]` holds entry `(i, i - k)` for `k = 0..=bw`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` at `(i, j)`; only the lower triangle (`j <= i`) is stored.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.bw);
        self.band[i * (self.bw + 1) + (i - j)] += v;
    }

    pub fn clear(&mut self) {
        self.band.iter_mut().for_each(|x| *x = 0.0);
    }

    /// In-place band Cholesky, `A = L Lᵀ`.
    pub fn factorize(mut self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // s = A[i][j] - sum_{k < j} L[i][k] L[j][k]
                let mut s = self.band[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= self.band[i * w + (i - k)] * self.band[j * w + (j - k)];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite(format!(
                            "band pivot {i} is {s:e}"
                        )));
                    }
                    self.band[i * w] = s.sqrt();
                } else {
                    self.band[i * w + (i - j)] = s / self.band[j * w];
                }
            }
        }
        Ok(BandCholesky { inner: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    inner: BandMatrix,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let BandMatrix { n, bw, ref band } = self.inner;
        let w = bw + 1;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= band[i * w + (i - k)] * b[k];
            }
            b[i] = s / band[i * w];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= band[k * w + (k - i)] * b[k];
            }
            b[i] = s / band[i * w];
        }
    }
}

/// Thomas algorithm for a tridiagonal system; `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::NotPositiveDefinite("zero pivot in tridiagonal solve".into()));
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {i} vanished in tridiagonal solve"
            )));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `sqrt(Σ w_i v_i²)`.
pub fn weighted_norm(v: &[f64], w: &[f64]) -> f64 {
    debug_assert_eq!(v.len(), w.len());
    v.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

/// `sqrt(Σ w_i (a_i - b_i)²)`.
pub fn weighted_distance(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    weighted_distance_sq(a, b, w).sqrt()
}

#[inline]
pub fn weighted_distance_sq(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), w)| {
            let d = x - y;
            w * d * d
        })
        .sum()
}
