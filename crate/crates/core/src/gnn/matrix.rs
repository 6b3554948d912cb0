use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use super::GnnError;
use crate::graph::NormAdj;

/// Element type for the dense kernels: `f32` for training, `f64` for checks.
pub trait Scalar: Float + Debug + Default + Sum + Send + Sync + 'static {
    fn from_real(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_real(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_real(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, GnnError> {
        if data.len() != rows * cols {
            return Err(GnnError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from_real(x.as_f64())).collect(),
        }
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Self) -> Result<Self, GnnError> {
        if self.cols != other.rows {
            return Err(GnnError::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Self) -> Result<Self, GnnError> {
        if self.rows != other.rows {
            return Err(GnnError::Shape(format!(
                "t_matmul {:?}ᵀ x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Self) -> Result<Self, GnnError> {
        if self.cols != other.cols {
            return Err(GnnError::Shape(format!(
                "matmul_t {:?} x {:?}ᵀ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self::from_fn(self.rows, other.rows, |i, j| {
            self.row(i).iter().zip(other.row(j)).map(|(&a, &b)| a * b).sum()
        }))
    }

    /// Sparse-dense product `adj · self`.
    pub fn propagate(&self, adj: &NormAdj) -> Result<Self, GnnError> {
        if adj.num_nodes() != self.rows {
            return Err(GnnError::Shape(format!(
                "adjacency over {} nodes applied to {} rows",
                adj.num_nodes(),
                self.rows
            )));
        }
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = adj.row(i);
            let out_row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            for (&j, &w) in cols.iter().zip(vals) {
                let w = T::from_real(w);
                for (o, &x) in out_row.iter_mut().zip(&self.data[j * self.cols..(j + 1) * self.cols]) {
                    *o = *o + w * x;
                }
            }
        }
        Ok(out)
    }

    pub fn add_row_vector(&mut self, v: &[T]) {
        debug_assert_eq!(v.len(), self.cols);
        for row in self.data.chunks_mut(self.cols.max(1)) {
            for (x, &b) in row.iter_mut().zip(v) {
                *x = *x + b;
            }
        }
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for row in self.data.chunks(self.cols.max(1)) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        out
    }

    pub fn scale(&mut self, s: T) {
        for x in &mut self.data {
            *x = *x * s;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, x| if x > m { x } else { m })
    }
}
