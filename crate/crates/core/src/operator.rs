//! Matrix-free linear operators.
//!
//! AMP only touches its measurement operator through four products: the
//! operator, its transpose, and the same two with every entry squared.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `out = A x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = A^T y`
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]);
    /// `out = (A .* A) x`
    fn apply_squared(&self, x: &[f64], out: &mut [f64]);
    /// `out = (A .* A)^T y`
    fn apply_squared_transpose(&self, y: &[f64], out: &mut [f64]);

    /// Dense copy, built column by column from `apply`. Intended for tests and small problems.
    fn to_dense(&self) -> DMatrix<f64> {
        let (m, n) = (self.nrows(), self.ncols());
        let mut dense = DMatrix::zeros(m, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; m];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            e[j] = 0.0;
            dense.column_mut(j).copy_from_slice(&col);
        }
        dense
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what}: length {got}, expected {want}")));
    }
    Ok(())
}

/// A dense matrix behind the operator interface.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
    squared: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let squared = matrix.map(|x| x * x);
        DenseOperator { matrix, squared }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

fn gemv(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for (o, &aij) in out.iter_mut().zip(a.column(j).iter()) {
                *o += aij * xj;
            }
        }
    }
}

fn gemv_t(a: &DMatrix<f64>, y: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = a.column(j).iter().zip(y).map(|(a, b)| a * b).sum();
    }
}

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        gemv(&self.matrix, x, out);
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        gemv_t(&self.matrix, y, out);
    }

    fn apply_squared(&self, x: &[f64], out: &mut [f64]) {
        gemv(&self.squared, x, out);
    }

    fn apply_squared_transpose(&self, y: &[f64], out: &mut [f64]) {
        gemv_t(&self.squared, y, out);
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_products() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.0, 3.0, 0.5, -1.0]);
        let op = DenseOperator::new(a);
        let mut out = [0.0; 2];
        op.apply(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, [-1.0, 2.5]);
        op.apply_squared(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, [5.0, 10.25]);
        let mut back = [0.0; 3];
        op.apply_transpose(&[1.0, 2.0], &mut back);
        assert_eq!(back, [7.0, -1.0, -2.0]);
        op.apply_squared_transpose(&[1.0, 2.0], &mut back);
        assert_eq!(back, [19.0, 4.5, 2.0]);
        assert_eq!(op.to_dense(), *op.matrix());
    }
}
