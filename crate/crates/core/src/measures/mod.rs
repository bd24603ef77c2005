//! Per-instance property measures.
//!
//! * Min-Margin: `1 - (p_max - p_second)` over the class probability row.
//! * Eccentricity: variance-scaled Euclidean distance to the coordinate-wise median.
//! * Disagreement: mean Jensen-Shannon distance between an instance's class
//!   distribution and those of its `k` nearest feature-space neighbors.
//!
//! All functions are pure and parallelize over instances with rayon.

#[cfg(all(target_arch = "x86_64", target_os = "linux"))]
mod amx;
mod eccentricity;
mod js;
mod knn;
mod partition;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassId;

pub use eccentricity::{eccentricity, eccentricity_values, EccentricityConfig};
pub use js::{disagreement, disagreement_with_neighbors, js_distance};
pub use knn::{knn, knn_all, NeighborTable, NeighborhoodConfig};
pub use partition::{partition_by_class, Partitions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    #[default]
    MinMargin,
    Eccentricity,
    Disagreement,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::MinMargin, Measure::Eccentricity, Measure::Disagreement];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::MinMargin => "min_margin",
            Measure::Eccentricity => "eccentricity",
            Measure::Disagreement => "disagreement",
        }
    }

    /// Whether computing the measure values needs class probabilities.
    pub fn needs_model(self) -> bool {
        !matches!(self, Measure::Eccentricity)
    }
}

impl std::str::FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown measure {s:?}"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("need at least 2 instances, got {0}")]
    TooFewInstances(usize),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("row {row} is not a probability distribution: {reason}")]
    NotADistribution { row: usize, reason: String },
    #[error("neighbor count {k} must lie in 1..={max}")]
    NeighborCount { k: usize, max: usize },
    #[error("query index {0} out of range")]
    QueryOutOfRange(usize),
}

pub type Result<T, E = MeasureError> = std::result::Result<T, E>;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Row-major `n x K` class probabilities; every row is a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * k {
            return Err(MeasureError::LengthMismatch {
                expected: n * k,
                found: data.len(),
            });
        }
        if k > 0 {
            for (row, p) in data.chunks_exact(k).enumerate() {
                check_distribution(p).map_err(|reason| MeasureError::NotADistribution { row, reason })?;
            }
        }
        Ok(Self { n, k, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * k);
        for r in rows {
            if r.len() != k {
                return Err(MeasureError::LengthMismatch {
                    expected: k,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), k, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Most probable class of row `i`; ties go to the lowest class id.
    pub fn argmax(&self, i: usize) -> ClassId {
        argmax(self.row(i))
    }

    pub fn predicted_classes(&self) -> Vec<ClassId> {
        (0..self.n).map(|i| self.argmax(i)).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> ClassId {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = c;
        }
    }
    ClassId::from(best)
}

pub(crate) fn check_distribution(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(format!("entry {v} is negative or non-finite"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// One scalar per instance for a measure, plus each instance's predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyScores {
    pub measure: Measure,
    pub values: Vec<f64>,
    pub predicted_class: Vec<ClassId>,
}

impl PropertyScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Min-Margin uncertainty for every row.
pub fn min_margin(probs: &ProbabilityMatrix) -> Result<PropertyScores> {
    let k = probs.num_classes();
    if k < 2 {
        return Err(MeasureError::TooFewClasses(k));
    }
    let (values, predicted_class) = (0..probs.len())
        .map(|i| {
            let row = probs.row(i);
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > first {
                    second = first;
                    first = p;
                    best = c;
                } else if p > second {
                    second = p;
                }
            }
            ((1.0 - (first - second)).clamp(0.0, 1.0), ClassId::from(best))
        })
        .unzip();
    Ok(PropertyScores {
        measure: Measure::MinMargin,
        values,
        predicted_class,
    })
}

/// Measure-specific settings, bundled so callers can dispatch on [`Measure`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasureConfig {
    #[serde(default)]
    pub neighborhood: NeighborhoodConfig,
    #[serde(default)]
    pub eccentricity: EccentricityConfig,
}

pub fn compute(
    measure: Measure,
    dataset: &crate::dataset::EmbeddingDataset,
    probs: &ProbabilityMatrix,
    config: &MeasureConfig,
) -> Result<PropertyScores> {
    match measure {
        Measure::MinMargin => min_margin(probs),
        Measure::Eccentricity => eccentricity(dataset, probs, &config.eccentricity),
        Measure::Disagreement => disagreement(dataset, probs, &config.neighborhood),
    }
}
