//! Minimal row-major dense matrix, just enough for small feedforward nets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(Error::Contract("vstack of matrices with different widths".into()));
        }
        let data: Vec<T> = parts.iter().flat_map(|m| m.data.iter().copied()).collect();
        Ok(Self {
            rows: data.len().checked_div(cols).unwrap_or(0),
            cols,
            data,
        })
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(shape_error("matmul", self, rhs));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (oj, &b) in o.iter_mut().zip(rhs.row(k)) {
                    *oj += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs`.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(shape_error("t_matmul", self, rhs));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let b = rhs.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj += a * bj;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T`.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(shape_error("matmul_t", self, rhs));
        }
        Ok(Self::from_fn(self.rows, rhs.rows, |i, j| {
            self.row(i).iter().zip(rhs.row(j)).map(|(&a, &b)| a * b).sum()
        }))
    }

    /// Adds `v` to every row.
    pub fn add_row(&mut self, v: &[T]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::Contract(format!(
                "row vector of length {} added to {} columns",
                v.len(),
                self.cols
            )));
        }
        for r in self.data.chunks_mut(self.cols.max(1)) {
            for (x, &b) in r.iter_mut().zip(v) {
                *x += b;
            }
        }
        Ok(())
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut s = vec![T::zero(); self.cols];
        for r in self.data.chunks(self.cols.max(1)) {
            for (acc, &x) in s.iter_mut().zip(r) {
                *acc += x;
            }
        }
        s
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise `self[i] = f(self[i], other[i])`.
    pub fn zip_apply(&mut self, other: &Self, f: impl Fn(T, T) -> T) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_error("elementwise", self, other));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = f(*a, b);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.zip_apply(other, |a, b| a + s * b)
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn shape_error<T>(op: &str, a: &Matrix<T>, b: &Matrix<T>) -> Error {
    Error::Contract(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn products_agree_with_hand_computation() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let b = m(&[&[1.0, 0.0, -1.0], &[2.0, 1.0, 0.0]]);
        assert_eq!(a.matmul(&b).unwrap(), m(&[&[5.0, 2.0, -1.0], &[11.0, 4.0, -3.0], &[17.0, 6.0, -5.0]]));
        assert_eq!(a.t_matmul(&a).unwrap(), m(&[&[35.0, 44.0], &[44.0, 56.0]]));
        assert_eq!(a.matmul_t(&a).unwrap()[(2, 1)], 39.0);
        assert!(a.matmul(&a).is_err());
        assert_eq!(Matrix::identity(2).matmul(&b).unwrap(), b);
    }

    #[test]
    fn row_helpers() {
        let mut a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        a.add_row(&[10.0, 20.0]).unwrap();
        assert_eq!(a.col_sums(), vec![24.0, 46.0]);
        assert_eq!(a.select_rows(&[1, 1, 0]).row(2), &[11.0, 22.0]);
        let s = Matrix::vstack(&[&a, &a]).unwrap();
        assert_eq!(s.shape(), (4, 2));
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0]).is_err());
    }
}
