//! Evaluation metrics: pair-counting adjusted Rand index, squared
//! Frobenius estimation error, and maximal row-wise error.

use ndarray::ArrayView2;

use crate::error::{DuetError, Result};

/// Chance-corrected partition agreement from the pair-counting contingency
/// table. 1 for identical partitions up to relabeling. Pair counts
/// accumulate in 128-bit integers; they overflow 32 bits long before the
/// problem sizes here.
pub fn adjusted_rand_index(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(DuetError::invalid(format!(
            "label vectors disagree in length: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(DuetError::invalid("need at least two items to compare partitions"));
    }

    let relabel = |labels: &[usize]| -> Vec<usize> {
        let mut map: Vec<usize> = Vec::new();
        labels
            .iter()
            .map(|&l| match map.iter().position(|&m| m == l) {
                Some(idx) => idx,
                None => {
                    map.push(l);
                    map.len() - 1
                }
            })
            .collect()
    };
    let a = relabel(labels_a);
    let b = relabel(labels_b);
    let ca = a.iter().max().unwrap() + 1;
    let cb = b.iter().max().unwrap() + 1;

    let mut table = vec![0u128; ca * cb];
    let mut row = vec![0u128; ca];
    let mut col = vec![0u128; cb];
    for (&ai, &bi) in a.iter().zip(&b) {
        table[ai * cb + bi] += 1;
        row[ai] += 1;
        col[bi] += 1;
    }
    let choose2 = |x: u128| x * x.saturating_sub(1) / 2;
    let index: u128 = table.iter().map(|&v| choose2(v)).sum();
    let sum_a: u128 = row.iter().map(|&v| choose2(v)).sum();
    let sum_b: u128 = col.iter().map(|&v| choose2(v)).sum();
    let total = choose2(n as u128);

    let expected = (sum_a as f64) * (sum_b as f64) / (total as f64);
    let max = 0.5 * ((sum_a + sum_b) as f64);
    let num = index as f64 - expected;
    let den = max - expected;
    if den == 0.0 {
        // Both partitions trivial (all-singletons or one block): identical.
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Squared Frobenius norm of the estimation error.
pub fn frobenius_error(theta_hat: ArrayView2<f64>, theta_star: ArrayView2<f64>) -> Result<f64> {
    check_shapes(theta_hat, theta_star)?;
    Ok((&theta_hat - &theta_star).iter().map(|d| d * d).sum())
}

/// Largest Euclidean row-wise error. Row-aligned by definition, not
/// invariant to permuting either argument's rows.
pub fn max_row_error(theta_hat: ArrayView2<f64>, theta_star: ArrayView2<f64>) -> Result<f64> {
    check_shapes(theta_hat, theta_star)?;
    let mut worst = 0.0f64;
    for (h, s) in theta_hat.rows().into_iter().zip(theta_star.rows()) {
        let d = (&h - &s).mapv(|v| v * v).sum().sqrt();
        worst = worst.max(d);
    }
    Ok(worst)
}

fn check_shapes(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(DuetError::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Dominant-type hard labels for deconvolution-only baselines: 1-based
/// argmax of each composition row, ties to the lowest type index.
pub fn dominant_type_labels(theta: ArrayView2<f64>) -> Vec<usize> {
    theta
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best + 1
        })
        .collect()
}

/// The three headline metrics for one fitted replicate.
#[derive(Clone, Copy, Debug)]
pub struct MetricReport {
    pub ari: f64,
    pub frob_sq_error: f64,
    pub max_row_error: f64,
}

pub fn evaluate(
    theta_hat: ArrayView2<f64>,
    labels_hat: &[usize],
    theta_star: ArrayView2<f64>,
    labels_star: &[usize],
) -> Result<MetricReport> {
    Ok(MetricReport {
        ari: adjusted_rand_index(labels_hat, labels_star)?,
        frob_sq_error: frobenius_error(theta_hat, theta_star)?,
        max_row_error: max_row_error(theta_hat, theta_star)?,
    })
}
