//! Small dense linear algebra: symmetric matrices and their Cholesky factors.
//!
//! The GP never needs more than a few hundred rows, so a straightforward
//! row-major implementation is enough and keeps the model layer generic over
//! [`Scalar`].

#![allow(clippy::needless_range_loop)]

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Lower-triangular Cholesky factorization. Fails when a pivot is not
    /// strictly positive (matrix not numerically positive definite).
    pub fn cholesky(&self) -> Result<Cholesky<T>, NotPositiveDefinite> {
        assert_eq!(self.rows, self.cols, "cholesky of a non-square matrix");
        let mut chol = Cholesky {
            n: 0,
            lower: Vec::with_capacity(self.rows * (self.rows + 1) / 2),
        };
        for i in 0..self.rows {
            chol.push_row(&self.row(i)[..=i])?;
        }
        Ok(chol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub value: f64,
}

/// Lower-triangular factor `L` with `L Lᵀ = A`, stored packed by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    #[inline]
    pub fn l(&self, i: usize, j: usize) -> T {
        debug_assert!(j <= i);
        self.lower[Self::offset(i) + j]
    }

    /// Extends the factorization of `A` to the bordered matrix
    /// `[[A, a], [aᵀ, α]]`, where `row = [aᵀ, α]`. Costs O(n²).
    pub fn push_row(&mut self, row: &[T]) -> Result<(), NotPositiveDefinite> {
        let n = self.n;
        assert_eq!(row.len(), n + 1, "bordering row has wrong length");
        let mut new = Vec::with_capacity(n + 1);
        for j in 0..n {
            let base = Self::offset(j);
            let mut s = row[j];
            for k in 0..j {
                s -= new[k] * self.lower[base + k];
            }
            new.push(s / self.lower[base + j]);
        }
        let d = row[n] - new.iter().map(|&v| v * v).sum::<T>();
        if d <= T::zero() || !d.is_finite() {
            return Err(NotPositiveDefinite {
                pivot: n,
                value: d.as_f64(),
            });
        }
        new.push(d.sqrt());
        self.lower.extend(new);
        self.n += 1;
        Ok(())
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let mut x = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let base = Self::offset(i);
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[base + k] * x[k];
            }
            x.push(s / self.lower[base + i]);
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        for i in (0..self.n).rev() {
            x[i] /= self.l(i, i);
            let xi = x[i];
            let base = Self::offset(i);
            for k in 0..i {
                x[k] -= self.lower[base + k] * xi;
            }
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log |A|`.
    pub fn log_det(&self) -> T {
        (0..self.n).map(|i| self.l(i, i).ln()).sum::<T>() * T::of(2.0)
    }

    /// Rebuilds `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        Matrix::from_fn(self.n, self.n, |i, j| {
            (0..=i.min(j)).map(|k| self.l(i, k) * self.l(j, k)).sum()
        })
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
