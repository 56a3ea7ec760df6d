//! Dense symmetric matrices and a Cholesky factor that supports adding and
//! removing indices, used by the active-set solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub(crate) fn from_flat(n: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        dot(&self.mul_vec(x), x)
    }

    pub fn max_asymmetry(&self) -> T {
        let mut m = T::zero();
        for i in 0..self.n {
            for j in 0..i {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Full Cholesky factorization; fails with the first non-positive pivot.
    pub fn cholesky(&self) -> Result<Cholesky<T>> {
        let mut c = Cholesky::with_capacity(self.n);
        let mut col = Vec::with_capacity(self.n);
        for i in 0..self.n {
            col.clear();
            col.extend((0..i).map(|j| self.get(i, j)));
            c.append(&col, self.get(i, i)).map_err(|_| Error::NotPositiveDefinite { pivot: i })?;
        }
        Ok(c)
    }

    /// Largest eigenvalue by power iteration (the matrix is assumed PSD).
    pub fn spectral_radius(&self, iters: usize) -> T {
        if self.n == 0 {
            return T::zero();
        }
        let mut v = vec![T::one() / T::from_usize_lossy(self.n).sqrt(); self.n];
        let mut lambda = T::zero();
        for _ in 0..iters {
            let w = self.mul_vec(&v);
            let norm = dot(&w, &w).sqrt();
            if norm == T::zero() {
                return T::zero();
            }
            lambda = norm;
            v = w.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Lower-triangular factor `L` with `L Lᵀ = A`, grown and shrunk one index at
/// a time.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    cap: usize,
    m: usize,
    l: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn with_capacity(cap: usize) -> Self {
        Self { cap, m: 0, l: vec![T::zero(); cap * cap] }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.m
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.l[i * self.cap + j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.l[i * self.cap + j]
    }

    /// Appends a row/column: `col` holds the new entries against the current
    /// indices, `diag` the new diagonal entry.
    pub fn append(&mut self, col: &[T], diag: T) -> Result<()> {
        assert_eq!(col.len(), self.m);
        if self.m == self.cap {
            self.grow();
        }
        let row = self.forward(col);
        let pivot = diag - dot(&row, &row);
        if !(pivot > T::zero()) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: self.m });
        }
        let m = self.m;
        for (j, v) in row.into_iter().enumerate() {
            *self.at_mut(m, j) = v;
        }
        *self.at_mut(m, m) = pivot.sqrt();
        self.m += 1;
        Ok(())
    }

    fn grow(&mut self) {
        let cap = (self.cap * 2).max(4);
        let mut l = vec![T::zero(); cap * cap];
        for i in 0..self.m {
            for j in 0..=i {
                l[i * cap + j] = self.at(i, j);
            }
        }
        self.cap = cap;
        self.l = l;
    }

    /// Removes index `r`, restoring triangularity with Givens rotations.
    pub fn remove(&mut self, r: usize) {
        assert!(r < self.m);
        let m = self.m;
        for i in r..m - 1 {
            for j in 0..=i + 1 {
                let v = self.at(i + 1, j);
                *self.at_mut(i, j) = v;
            }
        }
        for j in 0..m {
            *self.at_mut(m - 1, j) = T::zero();
        }
        // rows r..m-1 now carry one superdiagonal entry at column i+1
        for i in r..m - 1 {
            let a = self.at(i, i);
            let b = self.at(i, i + 1);
            let rho = a.hypot(b);
            if rho == T::zero() {
                continue;
            }
            let (c, s) = (a / rho, b / rho);
            for k in i..m - 1 {
                let x = self.at(k, i);
                let y = self.at(k, i + 1);
                *self.at_mut(k, i) = c * x + s * y;
                *self.at_mut(k, i + 1) = -s * x + c * y;
            }
        }
        for i in 0..m - 1 {
            if self.at(i, i) < T::zero() {
                for k in i..m - 1 {
                    let v = self.at(k, i);
                    *self.at_mut(k, i) = -v;
                }
            }
        }
        self.m -= 1;
        for k in 0..self.m {
            *self.at_mut(k, self.m) = T::zero();
        }
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &[T]) -> Vec<T> {
        let mut y = b.to_vec();
        for i in 0..self.m {
            let mut s = y[i];
            for j in 0..i {
                s = s - self.at(i, j) * y[j];
            }
            y[i] = s / self.at(i, i);
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn backward(&self, y: &[T]) -> Vec<T> {
        let mut x = y.to_vec();
        for i in (0..self.m).rev() {
            let mut s = x[i];
            for j in i + 1..self.m {
                s = s - self.at(j, i) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.backward(&self.forward(b))
    }

    /// Reconstructs `L Lᵀ` (for tests).
    pub fn reconstruct(&self) -> Matrix<T> {
        let mut a = Matrix::zeros(self.m);
        for i in 0..self.m {
            for j in 0..self.m {
                let mut s = T::zero();
                for k in 0..=i.min(j) {
                    s = s + self.at(i, k) * self.at(j, k);
                }
                a.set(i, j, s);
            }
        }
        a
    }
}
