//! Small dense row-major matrices for transition tables.
//!
//! The hidden spaces here are tiny (10x10 chains, 100 joint states), so a
//! plain `Vec<f64>` with explicit indexing beats pulling in a linear-algebra
//! dependency.

use crate::error::{GincError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
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
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data; panics on a length mismatch.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.data.iter().all(|&x| x > 0.0)
    }

    /// Check that every row sums to 1 within `tol` and all entries are
    /// nonnegative.
    pub fn check_row_stochastic(&self, tol: f64) -> Result<()> {
        for r in 0..self.rows {
            let row = self.row(r);
            if row.iter().any(|&x| x < 0.0) {
                return Err(GincError::InvalidDistribution(format!(
                    "row {r} has a negative entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(GincError::InvalidDistribution(format!(
                    "row {r} sums to {sum}, expected 1 within {tol}"
                )));
            }
        }
        Ok(())
    }
}

/// Check that `v` is a probability vector within `tol`.
pub fn check_distribution(v: &[f64], tol: f64) -> Result<()> {
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(GincError::InvalidDistribution(
            "entries must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(GincError::InvalidDistribution(format!(
            "vector sums to {sum}, expected 1 within {tol}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_row_stochastic() {
        let m = Matrix::identity(4);
        m.check_row_stochastic(0.0).unwrap();
        assert_eq!(m.get(2, 2), 1.0);
        assert_eq!(m.get(2, 3), 0.0);
    }

    #[test]
    fn rejects_bad_rows() {
        let m = Matrix::from_vec(1, 2, vec![0.7, 0.2]);
        assert!(m.check_row_stochastic(1e-12).is_err());
        let m = Matrix::from_vec(1, 2, vec![1.5, -0.5]);
        assert!(m.check_row_stochastic(1e-12).is_err());
    }

    #[test]
    fn distribution_check() {
        check_distribution(&[0.25; 4], 1e-12).unwrap();
        assert!(check_distribution(&[0.5, 0.6], 1e-12).is_err());
        assert!(check_distribution(&[f64::NAN, 1.0], 1e-12).is_err());
    }
}
