use rayon::prelude::*;

use super::{
    check_distribution, knn_all, Measure, MeasureError, NeighborTable, NeighborhoodConfig, ProbabilityMatrix, PropertyScores,
    Result,
};
use crate::dataset::EmbeddingDataset;

/// Jensen-Shannon distance (square root of the base-2 divergence), in `[0, 1]`.
pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MeasureError::LengthMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    check_distribution(p).map_err(|reason| MeasureError::NotADistribution { row: 0, reason })?;
    check_distribution(q).map_err(|reason| MeasureError::NotADistribution { row: 1, reason })?;
    Ok(js_distance_unchecked(p, q))
}

#[inline]
pub(crate) fn js_distance_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let lp: Vec<f64> = p.iter().map(|&a| log2_or_zero(a)).collect();
    let lq: Vec<f64> = q.iter().map(|&b| log2_or_zero(b)).collect();
    js_distance_with_logs(p, &lp, q, &lq)
}

#[inline]
fn log2_or_zero(a: f64) -> f64 {
    if a > 0.0 { a.log2() } else { 0.0 }
}

/// JS distance given `log2` of every positive entry of `p` and `q`.
#[inline]
fn js_distance_with_logs(p: &[f64], lp: &[f64], q: &[f64], lq: &[f64]) -> f64 {
    let mut divergence = 0.0;
    for (((&a, &la), &b), &lb) in p.iter().zip(lp).zip(q).zip(lq) {
        let m = 0.5 * (a + b);
        if m > 0.0 {
            let lm = m.log2();
            let ta = if a > 0.0 { a * (la - lm) } else { 0.0 };
            let tb = if b > 0.0 { b * (lb - lm) } else { 0.0 };
            // Commutative sum keeps the distance exactly symmetric.
            divergence += ta + tb;
        }
    }
    (0.5 * divergence).clamp(0.0, 1.0).sqrt()
}

/// Mean JS distance from each instance's distribution to its `k` feature-space neighbors.
pub fn disagreement(
    dataset: &EmbeddingDataset,
    probs: &ProbabilityMatrix,
    config: &NeighborhoodConfig,
) -> Result<PropertyScores> {
    if probs.len() != dataset.len() {
        return Err(MeasureError::LengthMismatch {
            expected: dataset.len(),
            found: probs.len(),
        });
    }
    let table = knn_all(dataset, config)?;
    disagreement_with_neighbors(&table, probs)
}

/// [`disagreement`] over a precomputed neighbor table.
pub fn disagreement_with_neighbors(table: &NeighborTable, probs: &ProbabilityMatrix) -> Result<PropertyScores> {
    if probs.len() != table.len() {
        return Err(MeasureError::LengthMismatch {
            expected: table.len(),
            found: probs.len(),
        });
    }
    let k = probs.num_classes();
    let logs: Vec<f64> = probs.as_slice().iter().map(|&a| log2_or_zero(a)).collect();
    let values = (0..probs.len())
        .into_par_iter()
        .map(|i| {
            let (p, lp) = (probs.row(i), &logs[i * k..(i + 1) * k]);
            let total: f64 = table
                .row(i)
                .iter()
                .map(|&j| {
                    let j = j as usize;
                    js_distance_with_logs(p, lp, probs.row(j), &logs[j * k..(j + 1) * k])
                })
                .sum();
            total / table.k() as f64
        })
        .collect();
    Ok(PropertyScores {
        measure: Measure::Disagreement,
        values,
        predicted_class: probs.predicted_classes(),
    })
}
