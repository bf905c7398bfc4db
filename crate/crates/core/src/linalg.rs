//! Small dense-matrix helpers shared across modules.

use crate::error::{invalid, Result};
use crate::Matrix;

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid("ragged rows"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn column(m: &Matrix, c: usize) -> Vec<f64> {
    m.column(c).iter().copied().collect()
}

pub fn select_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// Population mean and standard deviation of each column. A constant
/// column reports a deviation of 1 so that standardizing leaves it centred.
pub fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows().max(1) as f64;
    let mut means = Vec::with_capacity(m.ncols());
    let mut sds = Vec::with_capacity(m.ncols());
    for col in m.column_iter() {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        means.push(mean);
        sds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    (means, sds)
}

pub fn standardize(m: &Matrix, means: &[f64], sds: &[f64]) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |r, c| (m[(r, c)] - means[c]) / sds[c])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
