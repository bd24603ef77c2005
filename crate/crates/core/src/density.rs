//! Per-class density curves, range selections and label statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, LabelLedger, LabelState};
use crate::measures::PropertyScores;

pub const CURVE_POINTS: usize = 256;
pub const MIN_BANDWIDTH: f64 = 1e-3;
/// The evaluation grid extends this many bandwidths beyond the data range.
pub const GRID_PADDING: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("class {class} is outside the {num_classes}-class schema")]
    UnknownClass { class: ClassId, num_classes: usize },
    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("limit must be positive")]
    ZeroLimit,
    #[error("scores cover {found} instances, ledger has {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

pub type Result<T, E = DensityError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub class_id: ClassId,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub bandwidth: f64,
    /// Smallest and largest partition value.
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl DensityCurve {
    /// Trapezoid rule over the emitted grid.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.y.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 * min(std, IQR / 1.34) * m^(-1/5)`, using whichever spread is positive
/// when the other vanishes, floored at [`MIN_BANDWIDTH`]. Expects sorted input.
fn silverman(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    let sigma = if m > 1 {
        let mean = sorted.iter().sum::<f64>() / m as f64;
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
    } else {
        0.0
    };
    let iqr = (quantile(sorted, 0.75) - quantile(sorted, 0.25)) / 1.34;
    let spread = match (sigma > 0.0, iqr > 0.0) {
        (true, true) => sigma.min(iqr),
        (true, false) => sigma,
        (false, true) => iqr,
        (false, false) => 0.0,
    };
    (0.9 * spread * (m as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

pub fn silverman_bandwidth(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(silverman(&sorted))
}

/// Gaussian KDE of a partition's values; `None` for an empty partition.
pub fn kde_curve(class_id: ClassId, values: &[f64]) -> Option<DensityCurve> {
    if values.is_empty() {
        return None;
    }
    // Sorting first makes the curve independent of input order, bit for bit.
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = silverman(&sorted);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let start = min - GRID_PADDING * h;
    let step = (max - min + 2.0 * GRID_PADDING * h) / (CURVE_POINTS - 1) as f64;
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..CURVE_POINTS).map(|i| start + i as f64 * step).collect();
    let y = x
        .iter()
        .map(|&xi| {
            sorted
                .iter()
                .map(|&v| {
                    let z = (xi - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Some(DensityCurve {
        class_id,
        x,
        y,
        bandwidth: h,
        min,
        max,
        count: sorted.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSelection {
    pub class_id: ClassId,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Highest value first, ties by index, at most `limit` long.
    pub indices: Vec<usize>,
    /// Number of matches before truncation.
    pub total: usize,
}

fn check_class(class: ClassId, scores: &PropertyScores, ledger: &LabelLedger) -> Result<()> {
    if scores.len() != ledger.len() {
        return Err(DensityError::LengthMismatch {
            expected: ledger.len(),
            found: scores.len(),
        });
    }
    if class.index() >= ledger.num_classes() {
        return Err(DensityError::UnknownClass {
            class,
            num_classes: ledger.num_classes(),
        });
    }
    Ok(())
}

/// Unlabeled instances predicted as `class`, as `(index, value)` in index order.
pub fn partition_members(
    class: ClassId,
    scores: &PropertyScores,
    ledger: &LabelLedger,
) -> Result<Vec<(usize, f64)>> {
    check_class(class, scores, ledger)?;
    Ok(scores
        .values
        .iter()
        .zip(&scores.predicted_class)
        .enumerate()
        .filter(|&(i, (_, &c))| c == class && ledger.is_unlabeled(i))
        .map(|(i, (&v, _))| (i, v))
        .collect())
}

/// Every match of the selection, highest value first (ties by index).
pub fn selection_matches(
    selection: &RangeSelection,
    scores: &PropertyScores,
    ledger: &LabelLedger,
) -> Result<Vec<usize>> {
    let RangeSelection { class_id, lo, hi } = *selection;
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(DensityError::InvalidRange { lo, hi });
    }
    let mut hits: Vec<(usize, f64)> = partition_members(class_id, scores, ledger)?
        .into_iter()
        .filter(|&(_, v)| lo <= v && v <= hi)
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(hits.into_iter().map(|(i, _)| i).collect())
}

pub fn resolve_selection(
    selection: &RangeSelection,
    scores: &PropertyScores,
    ledger: &LabelLedger,
    limit: usize,
) -> Result<SelectionResult> {
    if limit == 0 {
        return Err(DensityError::ZeroLimit);
    }
    let mut indices = selection_matches(selection, scores, ledger)?;
    let total = indices.len();
    indices.truncate(limit);
    Ok(SelectionResult { indices, total })
}

/// Instances at or below `value` in the class partition.
pub fn hover_preview(
    class_id: ClassId,
    value: f64,
    scores: &PropertyScores,
    ledger: &LabelLedger,
    limit: usize,
) -> Result<SelectionResult> {
    if limit == 0 {
        return Err(DensityError::ZeroLimit);
    }
    let members = partition_members(class_id, scores, ledger)?;
    let Some(lo) = members.iter().map(|&(_, v)| v).min_by(f64::total_cmp) else {
        return Ok(SelectionResult::default());
    };
    if value < lo {
        return Ok(SelectionResult::default());
    }
    resolve_selection(&RangeSelection { class_id, lo, hi: value }, scores, ledger, limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub instance: usize,
    pub batch: usize,
    /// Unlabeled instances currently predicted as this class.
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub per_class: Vec<ClassCounts>,
    /// Unlabeled instances without a prediction (no trained model yet).
    pub unpredicted: usize,
}

impl ClassStats {
    pub fn total(&self) -> usize {
        self.unpredicted
            + self
                .per_class
                .iter()
                .map(|c| c.instance + c.batch + c.unlabeled)
                .sum::<usize>()
    }
}

pub fn class_stats(ledger: &LabelLedger, scores: Option<&PropertyScores>) -> Result<ClassStats> {
    if let Some(s) = scores {
        if s.len() != ledger.len() {
            return Err(DensityError::LengthMismatch {
                expected: ledger.len(),
                found: s.len(),
            });
        }
    }
    let mut stats = ClassStats {
        per_class: vec![ClassCounts::default(); ledger.num_classes()],
        unpredicted: 0,
    };
    for (i, state) in ledger.states().enumerate() {
        match state {
            LabelState::Instance(c) => stats.per_class[c.index()].instance += 1,
            LabelState::Batch(c) => stats.per_class[c.index()].batch += 1,
            LabelState::Unlabeled => match scores {
                Some(s) => stats.per_class[s.predicted_class[i].index()].unlabeled += 1,
                None => stats.unpredicted += 1,
            },
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Measure;
    use proptest::prelude::*;

    fn scores(values: &[f64], classes: &[u32]) -> PropertyScores {
        PropertyScores {
            measure: Measure::MinMargin,
            values: values.to_vec(),
            predicted_class: classes.iter().map(|&c| ClassId(c)).collect(),
        }
    }

    #[test]
    fn single_value_bump() {
        let c = kde_curve(ClassId(0), &[0.4]).unwrap();
        assert_eq!(c.bandwidth, MIN_BANDWIDTH);
        assert_eq!(c.x.len(), CURVE_POINTS);
        let peak = c.y.iter().copied().fold(0.0, f64::max);
        let expected = 1.0 / (c.bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        assert!((peak - expected).abs() / expected < 1e-3, "{peak} vs {expected}");
        for i in 0..CURVE_POINTS / 2 {
            assert!((c.y[i] - c.y[CURVE_POINTS - 1 - i]).abs() < 1e-9 * expected);
        }
        assert!((c.integral() - 1.0).abs() < 0.02);
    }

    #[test]
    fn equal_values_use_floor() {
        let c = kde_curve(ClassId(1), &[0.0; 7]).unwrap();
        assert_eq!(c.bandwidth, MIN_BANDWIDTH);
        assert!((c.integral() - 1.0).abs() < 0.02);
        assert!(kde_curve(ClassId(0), &[]).is_none());
    }

    #[test]
    fn uniform_values_integrate_to_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let c = kde_curve(ClassId(0), &v).unwrap();
        assert!((c.integral() - 1.0).abs() < 0.02, "{}", c.integral());
        assert!(c.x[0] < c.min && c.x[CURVE_POINTS - 1] > c.max);
    }

    #[test]
    fn silverman_matches_hand_computation() {
        // std = 1.5811, IQR = 2 / 1.34 = 1.4925, m = 5.
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((h - 0.9 * (2.0 / 1.34) * 5f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn selection_examples() {
        let s = scores(&[0.2, 0.5, 0.9], &[0, 0, 0]);
        let l = LabelLedger::new(3, 2);
        let sel = |lo, hi| RangeSelection { class_id: ClassId(0), lo, hi };
        let r = resolve_selection(&sel(0.1, 0.6), &s, &l, 10).unwrap();
        assert_eq!((r.indices, r.total), (vec![1, 0], 2));
        let r = resolve_selection(&sel(0.0, 1.0), &s, &l, 1).unwrap();
        assert_eq!((r.indices, r.total), (vec![2], 3));
        let r = resolve_selection(&sel(0.5, 0.5), &s, &l, 5).unwrap();
        assert_eq!((r.indices, r.total), (vec![1], 1));
        assert_eq!(
            resolve_selection(&sel(0.6, 0.1), &s, &l, 1),
            Err(DensityError::InvalidRange { lo: 0.6, hi: 0.1 })
        );
        assert!(matches!(
            resolve_selection(&RangeSelection { class_id: ClassId(5), lo: 0.0, hi: 1.0 }, &s, &l, 1),
            Err(DensityError::UnknownClass { .. })
        ));
        assert_eq!(resolve_selection(&sel(0.0, 1.0), &s, &l, 0), Err(DensityError::ZeroLimit));
    }

    #[test]
    fn labeled_and_other_classes_are_excluded() {
        let s = scores(&[0.2, 0.5, 0.9, 0.4], &[0, 0, 0, 1]);
        let mut l = LabelLedger::new(4, 2);
        l.label_instance(2, ClassId(0)).unwrap();
        let r = resolve_selection(&RangeSelection { class_id: ClassId(0), lo: 0.0, hi: 1.0 }, &s, &l, 9).unwrap();
        assert_eq!(r.indices, vec![1, 0]);
    }

    #[test]
    fn hover_examples() {
        let s = scores(&[0.1, 0.4, 0.7], &[0, 0, 0]);
        let l = LabelLedger::new(3, 2);
        assert_eq!(hover_preview(ClassId(0), 0.5, &s, &l, 10).unwrap().indices, vec![1, 0]);
        assert_eq!(hover_preview(ClassId(0), 0.05, &s, &l, 10).unwrap().total, 0);
        assert_eq!(hover_preview(ClassId(1), 0.5, &s, &l, 10).unwrap().total, 0);
        assert_eq!(hover_preview(ClassId(0), 0.7, &s, &l, 10).unwrap().indices, vec![2, 1, 0]);
    }

    #[test]
    fn stats_examples() {
        let s = scores(&[0.0; 5], &[0, 1, 1, 0, 1]);
        let mut l = LabelLedger::new(5, 2);
        let st = class_stats(&l, Some(&s)).unwrap();
        assert_eq!(st.per_class[0].unlabeled, 2);
        assert_eq!(st.per_class[1].unlabeled, 3);
        l.label_instance(0, ClassId(1)).unwrap();
        l.label_batch(&[1, 2], ClassId(0)).unwrap();
        let st = class_stats(&l, Some(&s)).unwrap();
        assert_eq!(st.per_class[0], ClassCounts { instance: 0, batch: 2, unlabeled: 1 });
        assert_eq!(st.per_class[1], ClassCounts { instance: 1, batch: 0, unlabeled: 1 });
        let untrained = class_stats(&l, None).unwrap();
        assert_eq!(untrained.unpredicted, 2);
        assert_eq!(untrained.total(), 5);

        let mut all = LabelLedger::new(5, 2);
        all.label_batch(&[0, 1, 2, 3, 4], ClassId(0)).unwrap();
        assert_eq!(class_stats(&all, Some(&s)).unwrap().per_class[0].batch, 5);
    }

    fn scored(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u32>)> {
        (1..max_n).prop_flat_map(|n| {
            (
                prop::collection::vec((0u32..20).prop_map(|v| f64::from(v) / 19.0), n),
                prop::collection::vec(0u32..3, n),
            )
        })
    }

    proptest! {
        #[test]
        fn kde_nonnegative_and_order_free(mut v in prop::collection::vec(-5.0f64..5.0, 1..60)) {
            let a = kde_curve(ClassId(0), &v).unwrap();
            prop_assert!(a.y.iter().all(|&y| y >= 0.0));
            v.reverse();
            prop_assert_eq!(a, kde_curve(ClassId(0), &v).unwrap());
        }

        #[test]
        fn kde_integrates_to_one(v in prop::collection::vec(-5.0f64..5.0, 2..200)) {
            let c = kde_curve(ClassId(0), &v).unwrap();
            prop_assert!((c.integral() - 1.0).abs() <= 0.02);
        }

        #[test]
        fn selections_are_sorted_subsets(
            (values, classes) in scored(40),
            labeled in prop::collection::vec(any::<bool>(), 40),
            lo in 0.0f64..1.0,
            width in 0.0f64..1.0,
        ) {
            let n = values.len();
            let s = scores(&values, &classes);
            let mut l = LabelLedger::new(n, 3);
            for i in (0..n).filter(|&i| labeled[i]) {
                l.label_instance(i, ClassId(classes[i])).unwrap();
            }
            for c in 0..3 {
                let sel = RangeSelection { class_id: ClassId(c), lo, hi: lo + width };
                let r = resolve_selection(&sel, &s, &l, n).unwrap();
                prop_assert_eq!(r.indices.len(), r.total);
                for &i in &r.indices {
                    prop_assert!(l.is_unlabeled(i) && classes[i] == c);
                }
                for w in r.indices.windows(2) {
                    let (a, b) = (values[w[0]], values[w[1]]);
                    prop_assert!(a > b || (a == b && w[0] < w[1]));
                }
                let full = resolve_selection(&RangeSelection { class_id: ClassId(c), lo: f64::MIN, hi: f64::MAX }, &s, &l, n).unwrap();
                let hover = hover_preview(ClassId(c), 1.0, &s, &l, n).unwrap();
                prop_assert_eq!(full, hover);
            }
        }

        #[test]
        fn stats_total_n(
            (values, classes) in scored(40),
            actions in prop::collection::vec((0usize..40, 0u32..3, any::<bool>()), 0..30),
        ) {
            let n = values.len();
            let s = scores(&values, &classes);
            let mut l = LabelLedger::new(n, 3);
            for (i, c, batch) in actions {
                let i = i % n;
                if batch {
                    let _ = l.label_batch(&[i], ClassId(c));
                } else {
                    l.label_instance(i, ClassId(c)).unwrap();
                }
                prop_assert_eq!(class_stats(&l, Some(&s)).unwrap().total(), n);
                prop_assert_eq!(class_stats(&l, None).unwrap().total(), n);
            }
        }
    }
}
