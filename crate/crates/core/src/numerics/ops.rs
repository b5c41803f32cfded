//! Plain (non-differentiable) layer primitives shared by the tape and by inference paths.

use super::Matrix;

/// Stabilizer added to the per-column variance in context normalization.
pub const CN_EPS: f64 = 1e-6;
/// Rows whose norm is at or below this are treated as zero by [`l2_normalize_rows`].
pub const L2_EPS: f64 = 1e-12;

/// Sum of `xs` in ascending order, so the result does not depend on their order.
fn order_free_sum(xs: &mut [f64]) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    xs.iter().sum()
}

/// Per-column population mean and variance over the rows of `m`; both are
/// bit-identical under any permutation of the rows.
pub fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let k = m.rows().max(1) as f64;
    let mut col = vec![0.0; m.rows()];
    let mut mean = Vec::with_capacity(m.cols());
    let mut var = Vec::with_capacity(m.cols());
    for c in 0..m.cols() {
        for (v, r) in col.iter_mut().zip(m.iter_rows()) {
            *v = r[c];
        }
        let mu = order_free_sum(&mut col) / k;
        for (v, r) in col.iter_mut().zip(m.iter_rows()) {
            *v = (r[c] - mu) * (r[c] - mu);
        }
        mean.push(mu);
        var.push(order_free_sum(&mut col) / k);
    }
    (mean, var)
}

/// Standardizes each column with its own statistics. Returns the output, the
/// column means, population variances and `1/sqrt(var + eps)`.
pub fn standardize_columns(m: &Matrix, eps: f64) -> (Matrix, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mean, var) = column_moments(m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = m.clone();
    for i in 0..out.rows() {
        for ((x, mu), s) in out.row_mut(i).iter_mut().zip(&mean).zip(&inv_std) {
            *x = (*x - mu) * s;
        }
    }
    (out, mean, var, inv_std)
}

/// Context normalization: every channel standardized across the K points of one instance.
pub fn context_normalize(features: &Matrix) -> Matrix {
    standardize_columns(features, CN_EPS).0
}

/// Unit-normalizes every row; rows with norm ≤ [`L2_EPS`] become zero rows.
pub fn l2_normalize_rows(m: &Matrix) -> Matrix {
    l2_normalize_rows_with_norms(m).0
}

pub(crate) fn l2_normalize_rows_with_norms(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > L2_EPS {
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
            norms.push(0.0);
        }
    }
    (out, norms)
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// `ln Σ exp(x)` computed stably.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}
