use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::hungarian;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryReport {
    /// `correlation[a][b]`: inferred topic `a` against true topic `b`.
    pub correlation: Matrix,
    /// `matching[a]` is the true topic paired with inferred topic `a`.
    pub matching: Vec<usize>,
    pub matched: Vec<f64>,
    pub matched_mean: f64,
}

impl RecoveryReport {
    pub fn matched_min(&self) -> f64 {
        self.matched.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Pearson correlation over rows between every column of `x` and every
/// column of `y`. Columns without variance correlate 0 with everything.
pub fn pearson_matrix(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    let d = x.rows();
    if y.rows() != d {
        return Err(Error::ShapeMismatch(format!(
            "{d} rows against {} rows",
            y.rows()
        )));
    }
    let centred = |m: &Matrix| -> (Matrix, Vec<f64>) {
        let mut c = m.transpose();
        let mut norms = Vec::with_capacity(c.rows());
        for col in 0..c.rows() {
            let row = c.row_mut(col);
            let mean = row.iter().sum::<f64>() / d as f64;
            row.iter_mut().for_each(|v| *v -= mean);
            norms.push(row.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        (c, norms)
    };
    let (cx, nx) = centred(x);
    let (cy, ny) = centred(y);
    let mut out = Matrix::zeros(x.cols(), y.cols());
    for a in 0..x.cols() {
        for b in 0..y.cols() {
            if nx[a] > 0.0 && ny[b] > 0.0 {
                let r = crate::matrix::dot(cx.row(a), cy.row(b)) / (nx[a] * ny[b]);
                out[(a, b)] = r.clamp(-1.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Correlates inferred and true topic mixtures and pairs topics by optimal
/// assignment on `1 - correlation`.
pub fn topic_recovery(theta_hat: &Matrix, theta_true: &Matrix) -> Result<RecoveryReport> {
    if theta_hat.rows() != theta_true.rows() || theta_hat.cols() != theta_true.cols() {
        return Err(Error::ShapeMismatch(
            "inferred and true mixtures differ in shape".into(),
        ));
    }
    if theta_hat.rows() < 3 {
        return Err(Error::InvalidArgument(
            "topic recovery needs at least 3 patients".into(),
        ));
    }
    let correlation = pearson_matrix(theta_hat, theta_true)?;
    let k = correlation.rows();
    let mut cost = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            cost[(a, b)] = 1.0 - correlation[(a, b)];
        }
    }
    let matching = hungarian(&cost);
    let matched: Vec<f64> = matching
        .iter()
        .enumerate()
        .map(|(a, &b)| correlation[(a, b)])
        .collect();
    let matched_mean = matched.iter().sum::<f64>() / k as f64;
    Ok(RecoveryReport {
        correlation,
        matching,
        matched,
        matched_mean,
    })
}
