use crate::{ComplexMatrix, Real};
use nalgebra::DMatrix;
use num_complex::Complex;

/// Row-compressed complex matrix used inside the integrators.
#[derive(Debug, Clone)]
pub(crate) struct Csr<T: Real> {
    rows: usize,
    cols: usize,
    row_start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<Complex<T>>,
}

impl<T: Real> Csr<T> {
    pub fn from_dense(m: &ComplexMatrix<T>) -> Self {
        let (rows, cols) = m.shape();
        let mut row_start = Vec::with_capacity(rows + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_start.push(0);
        for i in 0..rows {
            for j in 0..cols {
                let z = m[(i, j)];
                if z.re != T::zero() || z.im != T::zero() {
                    col.push(j);
                    val.push(z);
                }
            }
            row_start.push(col.len());
        }
        Self { rows, cols, row_start, col, val }
    }

    /// `out = self * x`.
    pub fn mul_into(&self, x: &ComplexMatrix<T>, out: &mut ComplexMatrix<T>) {
        debug_assert_eq!(x.nrows(), self.cols);
        out.fill(Complex::new(T::zero(), T::zero()));
        let n = x.ncols();
        for i in 0..self.rows {
            for k in self.row_start[i]..self.row_start[i + 1] {
                let a = self.val[k];
                let j = self.col[k];
                for c in 0..n {
                    out[(i, c)] += a * x[(j, c)];
                }
            }
        }
    }

    /// `out += self * x^dag`.
    pub fn mul_adjoint_add(&self, x: &ComplexMatrix<T>, out: &mut ComplexMatrix<T>) {
        let n = x.nrows();
        for i in 0..self.rows {
            for k in self.row_start[i]..self.row_start[i + 1] {
                let a = self.val[k];
                let j = self.col[k];
                for c in 0..n {
                    out[(i, c)] += a * x[(c, j)].conj();
                }
            }
        }
    }

    #[cfg(test)]
    pub fn nnz(&self) -> usize {
        self.val.len()
    }
}

pub(crate) fn zeros_like<T: Real>(m: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    DMatrix::zeros(m.nrows(), m.ncols())
}
