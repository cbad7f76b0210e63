//! Losses over logits. Each returns the batch-mean loss and its gradient
//! with respect to the logits.

use super::mlp::softmax;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

fn check_rows(logits: &Matrix, n: usize) -> Result<()> {
    if logits.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: logits.rows(),
            got: n,
        });
    }
    Ok(())
}

/// Softmax cross-entropy against integer labels.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_rows(logits, labels.len())?;
    let n = labels.len().max(1) as f64;
    let c = logits.cols();
    let mut grad = Vec::with_capacity(logits.rows() * c);
    let mut loss = 0.0;
    for (row, &y) in logits.row_iter().zip(labels) {
        if y >= c {
            return Err(Error::DimensionMismatch { expected: c, got: y + 1 });
        }
        let p = softmax(row);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad.extend(p.iter().enumerate().map(|(k, &pk)| (pk - f64::from(u8::from(k == y))) / n));
    }
    Ok((loss / n, Matrix::from_raw(logits.rows(), c, grad)))
}

/// Cross-entropy against target probability rows.
pub fn soft_cross_entropy(logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != targets.shape() {
        return Err(Error::DimensionMismatch {
            expected: logits.cols(),
            got: targets.cols(),
        });
    }
    let n = logits.rows().max(1) as f64;
    let mut grad = Vec::with_capacity(logits.rows() * logits.cols());
    let mut loss = 0.0;
    for (row, t) in logits.row_iter().zip(targets.row_iter()) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        let p = softmax(row);
        loss += t.iter().zip(row).map(|(tk, zk)| tk * (lse - zk)).sum::<f64>();
        grad.extend(p.iter().zip(t).map(|(pk, tk)| (pk - tk) / n));
    }
    Ok((loss / n, Matrix::from_raw(logits.rows(), logits.cols(), grad)))
}

/// Mean absolute difference over all entries.
pub fn l1(logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != targets.shape() {
        return Err(Error::DimensionMismatch {
            expected: logits.cols(),
            got: targets.cols(),
        });
    }
    let count = (logits.rows() * logits.cols()).max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(a, b)| {
            let d = a - b;
            loss += d.abs();
            if d > 0.0 {
                1.0 / count
            } else if d < 0.0 {
                -1.0 / count
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / count, Matrix::from_raw(logits.rows(), logits.cols(), grad)))
}

/// Per-row mean absolute difference.
pub fn l1_per_row(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let c = a.cols().max(1) as f64;
    a.row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / c)
        .collect()
}
