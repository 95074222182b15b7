//! Small dense matrices for cost weights and terminal ellipsoids, plus a safe wrapper over
//! the GEMM kernel used by the network code.
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            crate::error::check_len("matrix row", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `x^T M x`.
    #[inline]
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            acc += x[i] * dot(self.row(i), x);
        }
        acc
    }

    /// Adds `(M + M^T) x`, the gradient of `x^T M x`, into `out`.
    #[inline]
    pub fn add_quad_grad(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                let m = self.get(i, j);
                out[i] += m * x[j];
                out[j] += m * x[i];
            }
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Positive semidefiniteness via a Cholesky attempt on a slightly shifted copy.
    pub fn is_psd(&self) -> bool {
        if !self.is_symmetric(1e-12) {
            return false;
        }
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut shifted = self.clone();
        for i in 0..self.rows {
            shifted.data[i * self.cols + i] += 1e-10 * (1.0 + scale);
        }
        Cholesky::new(&shifted).is_ok()
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(m: &Matrix) -> Result<Self> {
        if !m.is_symmetric(1e-12 * (1.0 + m.data.iter().fold(0.0f64, |a, v| a.max(v.abs())))) {
            return Err(Error::NotPositiveDefinite);
        }
        let n = m.rows;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite);
                    }
                    l[i * n + i] = libm::sqrt(s);
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `M y = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Strided matrix view for [`gemm`]: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

/// `C <- alpha * A B + beta * C` with `A: m x k`, `B: k x n`, `C: m x n` (C row-major, contiguous).
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, v: &View<'_>| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * v.rs + (cols - 1) * v.cs + 1
        }
    };
    assert!(a.data.len() >= last(m, k, &a), "gemm: A too short");
    assert!(b.data.len() >= last(k, n, &b), "gemm: B too short");
    assert!(c.len() >= m * n, "gemm: C too short");
    // SAFETY: the asserts above bound every index the kernel touches for the given
    // dimensions and strides; C is exclusively borrowed and does not alias A or B.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let m = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let ch = Cholesky::new(&m).unwrap();
        let y = ch.solve(&[1.0, 2.0]);
        // Direct inverse of [[4,1],[1,3]] is [[3,-1],[-1,4]]/11.
        assert!((y[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((y[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        let m = Matrix::diag(&[1.0, -1.0]);
        assert_eq!(Cholesky::new(&m).unwrap_err(), Error::NotPositiveDefinite);
        assert!(!m.is_psd());
        assert!(Matrix::diag(&[0.0, 1.0]).is_psd());
    }

    #[test]
    fn gemm_matches_naive_with_transposed_view() {
        // A: 2x3, B^T stored as 2x3 (so B is 3x2).
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5];
        let mut c = [1.0; 4];
        gemm(
            2,
            3,
            2,
            1.0,
            View {
                data: &a,
                rs: 3,
                cs: 1,
            },
            View {
                data: &bt,
                rs: 1,
                cs: 3,
            },
            1.0,
            &mut c,
        );
        assert_eq!(
            c,
            [
                1.0 - 2.0,
                1.0 + 2.0 + 2.0 + 1.5,
                1.0 - 2.0,
                1.0 + 8.0 + 5.0 + 3.0
            ]
        );
    }

    #[test]
    fn quad_form_and_gradient() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0]]).unwrap();
        let x = [1.0, -1.0];
        assert_eq!(m.quad_form(&x), 1.0 - 2.0 + 3.0);
        let mut g = [0.0; 2];
        m.add_quad_grad(&x, &mut g);
        // (M + M^T) x = [[2,2],[2,6]] x
        assert_eq!(g, [0.0, -4.0]);
    }
}
