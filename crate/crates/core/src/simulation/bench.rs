use std::time::{Duration, Instant};

use serde::Serialize;

use super::synthetic::{random_dataset, random_probabilities};
use crate::measures::{self, Measure, MeasureConfig, MeasureError};

pub const BENCH_CLASSES: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub measure: Measure,
    pub n: usize,
    pub d: usize,
    #[serde(serialize_with = "as_millis")]
    pub elapsed: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

/// Times each measure on seeded random features and probabilities, keeping
/// the fastest of `repeat` runs.
pub fn bench_measures(
    n: usize,
    d: usize,
    seed: u64,
    repeat: usize,
    config: &MeasureConfig,
) -> Result<Vec<BenchRow>, MeasureError> {
    let dataset = random_dataset(n, d, BENCH_CLASSES, seed);
    let probs = random_probabilities(n, BENCH_CLASSES, seed.wrapping_add(1));
    Measure::ALL
        .iter()
        .map(|&measure| {
            let mut elapsed = Duration::MAX;
            for _ in 0..repeat.max(1) {
                let start = Instant::now();
                let scores = measures::compute(measure, &dataset, &probs, config)?;
                elapsed = elapsed.min(start.elapsed());
                debug_assert_eq!(scores.len(), n);
            }
            Ok(BenchRow { measure, n, d, elapsed })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_case_is_fast() {
        let rows = bench_measures(100, 8, 1, 2, &MeasureConfig::default()).unwrap();
        assert_eq!(rows.len(), 3);
        for r in rows {
            assert!(r.elapsed < Duration::from_millis(10), "{r:?}");
        }
    }
}
