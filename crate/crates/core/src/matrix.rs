//! Small dense complex matrices.
//!
//! System dimensions in this crate are tiny (two-level atoms, a handful of
//! dressed states), so a flat row-major buffer with hand-written kernels is
//! faster in the time-stepping loops than a general linear-algebra type.
//! Inversion and Hermitian spectra are delegated to `nalgebra`.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m.data[k * dim + k] = ONE;
        }
        m
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, d) in diag.iter().enumerate() {
            m[(k, k)] = *d;
        }
        m
    }

    /// Row-major construction. Panics if `rows` is not square.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "matrix rows must be square");
            data.extend_from_slice(r);
        }
        Self { dim, data }
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out.data[c * n + r] = self.data[r * n + c].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self.data[k * self.dim + k]).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Largest off-diagonal modulus.
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.dim;
        let mut m: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    m = m.max(self.data[r * n + c].norm());
                }
            }
        }
        m
    }

    /// Frobenius norm of the anti-Hermitian part.
    pub fn anti_hermitian_norm(&self) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..n {
                acc += (0.5 * (self.data[r * n + c] - self.data[c * n + r].conj())).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn hermitize(&self) -> Self {
        let adj = self.adjoint();
        let mut out = self.clone();
        for (o, a) in out.data.iter_mut().zip(adj.data.iter()) {
            *o = 0.5 * (*o + a);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &CMatrix, s: C64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * s;
        }
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out.data[r * n + c] = m[(r, c)];
            }
        }
        out
    }

    fn norm_one(&self) -> f64 {
        let n = self.dim;
        (0..n)
            .map(|c| (0..n).map(|r| self.data[r * n + c].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Inverse together with the 1-norm condition number.
    pub fn inverse_with_condition(&self) -> Option<(CMatrix, f64)> {
        if self.dim == 1 {
            let a = self.data[0];
            if a.norm() == 0.0 {
                return None;
            }
            return Some((CMatrix::from_diag(&[1.0 / a]), 1.0));
        }
        if self.dim == 2 {
            let (a, b, c, d) = (self.data[0], self.data[1], self.data[2], self.data[3]);
            let det = a * d - b * c;
            if det.norm() == 0.0 || !det.is_finite() {
                return None;
            }
            let inv = CMatrix {
                dim: 2,
                data: vec![d / det, -b / det, -c / det, a / det],
            };
            let cond = self.norm_one() * inv.norm_one();
            return Some((inv, cond));
        }
        let inv = self.to_nalgebra().try_inverse()?;
        let inv = Self::from_nalgebra(&inv);
        let cond = self.norm_one() * inv.norm_one();
        Some((inv, cond))
    }

    /// Inverse that fails when the condition number exceeds `max_condition`.
    pub fn inverse_checked(&self, max_condition: f64, context: &str) -> Result<CMatrix> {
        match self.inverse_with_condition() {
            Some((inv, cond)) if cond.is_finite() && cond <= max_condition => Ok(inv),
            Some((_, cond)) => Err(Error::Singular {
                context: context.to_string(),
                condition: cond,
            }),
            None => Err(Error::Singular {
                context: context.to_string(),
                condition: f64::INFINITY,
            }),
        }
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = self.hermitize();
        if h.dim == 1 {
            return vec![h.data[0].re];
        }
        if h.dim == 2 {
            let a = h.data[0].re;
            let d = h.data[3].re;
            let b = h.data[1];
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            return vec![mean - rad, mean + rad];
        }
        let eig = nalgebra::SymmetricEigen::new(h.to_nalgebra());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim);
        gemm_acc(&mut out.data, &self.data, &rhs.data, self.dim, ONE);
        out
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out.add_scaled(rhs, ONE);
        out
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out.add_scaled(rhs, -ONE);
        out
    }
}

/// `out += alpha * a * b` for row-major `n x n` buffers.
#[inline]
pub fn gemm_acc(out: &mut [C64], a: &[C64], b: &[C64], n: usize, alpha: C64) {
    for r in 0..n {
        for k in 0..n {
            let ark = a[r * n + k];
            if ark == ZERO {
                continue;
            }
            let s = ark * alpha;
            let brow = &b[k * n..(k + 1) * n];
            let orow = &mut out[r * n..(r + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += s * bv;
            }
        }
    }
}

/// `out += alpha * a * b^dagger` for row-major `n x n` buffers.
#[inline]
pub fn gemm_adj_acc(out: &mut [C64], a: &[C64], b: &[C64], n: usize, alpha: C64) {
    for r in 0..n {
        for c in 0..n {
            let mut acc = ZERO;
            let arow = &a[r * n..(r + 1) * n];
            let brow = &b[c * n..(c + 1) * n];
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y.conj();
            }
            out[r * n + c] += alpha * acc;
        }
    }
}
