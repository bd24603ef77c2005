use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MeasureError, ProbabilityMatrix, PropertyScores, Result};
use crate::dataset::EmbeddingDataset;
use crate::measures::Measure;

const MIN_VARIANCE: f64 = 1e-12;

/// Coordinates are multiplied by `variance^-variance_exponent` before the
/// distance. `1.0` scales by the inverse variance, `0.5` by the inverse
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EccentricityConfig {
    pub variance_exponent: f64,
}

impl Default for EccentricityConfig {
    fn default() -> Self {
        Self {
            variance_exponent: 1.0,
        }
    }
}

/// Eccentricity values with predicted classes taken from `probs`.
pub fn eccentricity(
    dataset: &EmbeddingDataset,
    probs: &ProbabilityMatrix,
    config: &EccentricityConfig,
) -> Result<PropertyScores> {
    if probs.len() != dataset.len() {
        return Err(MeasureError::LengthMismatch {
            expected: dataset.len(),
            found: probs.len(),
        });
    }
    Ok(PropertyScores {
        measure: Measure::Eccentricity,
        values: eccentricity_values(dataset, config)?,
        predicted_class: probs.predicted_classes(),
    })
}

/// Columns are gathered in groups of this width, one cache line per row.
const COLUMN_GROUP: usize = 16;

/// Per-dimension median and population variance.
fn column_stats(dataset: &EmbeddingDataset) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (dataset.len(), dataset.dim());
    let features = dataset.features();
    let groups: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .step_by(COLUMN_GROUP)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map_init(
            || (vec![0f32; COLUMN_GROUP * n], Vec::with_capacity(n)),
            |(columns, scratch), start| {
                let width = COLUMN_GROUP.min(d - start);
                gather_columns(features, d, start, width, columns);
                let mut medians = Vec::with_capacity(width);
                let mut variances = Vec::with_capacity(width);
                for col in columns.chunks_exact(n).take(width) {
                    variances.push(variance(col));
                    medians.push(median(col, scratch));
                }
                (medians, variances)
            },
        )
        .collect();
    let mut medians = Vec::with_capacity(d);
    let mut variances = Vec::with_capacity(d);
    for (m, v) in groups {
        medians.extend(m);
        variances.extend(v);
    }
    (medians, variances)
}

/// Copies columns `start..start + width` into `columns`, one column of `n`
/// values after another, transposing 16 x 16 tiles through a local buffer.
fn gather_columns(features: &[f32], d: usize, start: usize, width: usize, columns: &mut [f32]) {
    const T: usize = COLUMN_GROUP;
    let n = features.len() / d;
    let mut tile = [[0f32; T]; T];
    for i0 in (0..n).step_by(T) {
        let rows = T.min(n - i0);
        for (r, line) in tile.iter_mut().enumerate().take(rows) {
            let at = (i0 + r) * d + start;
            line[..width].copy_from_slice(&features[at..at + width]);
        }
        for c in 0..width {
            let col = &mut columns[c * n + i0..c * n + i0 + rows];
            for (r, v) in col.iter_mut().enumerate() {
                *v = tile[r][c];
            }
        }
    }
}

/// Population variance, two-pass in `f64`.
fn variance(col: &[f32]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { variance_avx512(col) };
    }
    variance_lanes(col)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn variance_avx512(col: &[f32]) -> f64 {
    variance_lanes(col)
}

#[inline(always)]
fn variance_lanes(col: &[f32]) -> f64 {
    let n = col.len() as f64;
    let mean = lane_sum(col, |v| v) / n;
    lane_sum(col, |v| (v - mean) * (v - mean)) / n
}

#[inline(always)]
fn lane_sum(values: &[f32], f: impl Fn(f64) -> f64) -> f64 {
    const LANES: usize = 16;
    let mut acc = [0f64; LANES];
    let chunks = values.chunks_exact(LANES);
    let rest = chunks.remainder();
    for chunk in chunks {
        for l in 0..LANES {
            acc[l] += f(f64::from(chunk[l]));
        }
    }
    for (l, &v) in rest.iter().enumerate() {
        acc[l] += f(f64::from(v));
    }
    acc.iter().sum()
}

/// Order-preserving map from finite `f32` to `u32`, consistent with `total_cmp`.
#[inline(always)]
fn order_key(v: f32) -> u32 {
    let bits = v.to_bits();
    bits ^ (((bits as i32) >> 31) as u32 | 0x8000_0000)
}

fn from_order_key(k: u32) -> f32 {
    f32::from_bits(if k >> 31 == 1 { k & 0x7fff_ffff } else { !k })
}

/// Median with the even-length midpoint convention.
fn median(values: &[f32], scratch: &mut Vec<u32>) -> f64 {
    let n = values.len();
    let (lo_rank, hi_rank) = ((n - 1) / 2, n / 2);
    let (lower, upper) = sampled_ranks(values, lo_rank, hi_rank, scratch)
        .unwrap_or_else(|| full_ranks(values, lo_rank, hi_rank, scratch));
    (f64::from(from_order_key(lower)) + f64::from(from_order_key(upper))) / 2.0
}

/// Top 11 bits of the order key.
const DIGIT_SHIFT: u32 = 21;
const DIGITS: usize = 2048;

/// Digits `first..=last` whose cumulative counts cover ranks `lo..=hi`.
fn digit_span(hist: &[u32; DIGITS], lo: usize, hi: usize) -> (u32, u32) {
    let mut seen = 0usize;
    let mut first = None;
    for (digit, &count) in hist.iter().enumerate() {
        seen += count as usize;
        if first.is_none() && seen > lo {
            first = Some(digit as u32);
        }
        if seen > hi {
            return (first.expect("lo <= hi"), digit as u32);
        }
    }
    unreachable!("ranks beyond the histogram total")
}

/// Picks a digit window from every sixteenth value, then verifies it with one
/// exact counting pass. `None` when the window misses a rank.
fn sampled_ranks(values: &[f32], lo_rank: usize, hi_rank: usize, scratch: &mut Vec<u32>) -> Option<(u32, u32)> {
    const STEP: usize = 16;
    let n = values.len();
    if n < 256 * STEP {
        return None;
    }
    let mut hist = [0u32; DIGITS];
    for &v in values.iter().step_by(STEP) {
        hist[(order_key(v) >> DIGIT_SHIFT) as usize] += 1;
    }
    let samples = n.div_ceil(STEP);
    let margin = 2 * (samples as f64).sqrt() as usize + 1;
    let lo = (lo_rank / STEP).saturating_sub(margin);
    let hi = (hi_rank / STEP + margin).min(samples - 1);
    let (first, last) = digit_span(&hist, lo, hi);
    let (below, found) = collect_digits(values, first, last, scratch);
    (below <= lo_rank && below + found > hi_rank).then(|| pick(&mut scratch[..found], lo_rank - below, hi_rank - below))
}

fn full_ranks(values: &[f32], lo_rank: usize, hi_rank: usize, scratch: &mut Vec<u32>) -> (u32, u32) {
    let mut hist = [0u32; DIGITS];
    for &v in values {
        hist[(order_key(v) >> DIGIT_SHIFT) as usize] += 1;
    }
    let (first, last) = digit_span(&hist, lo_rank, hi_rank);
    let (below, found) = collect_digits(values, first, last, scratch);
    pick(&mut scratch[..found], lo_rank - below, hi_rank - below)
}

/// Counts keys below digit `first` and packs those with digits in
/// `first..=last` into the front of `scratch`.
fn collect_digits(values: &[f32], first: u32, last: u32, scratch: &mut Vec<u32>) -> (usize, usize) {
    if scratch.len() < values.len() {
        scratch.resize(values.len(), 0);
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { collect_digits_avx512(values, first, last, scratch) };
    }
    let (mut below, mut found) = (0usize, 0usize);
    for &v in values {
        let k = order_key(v);
        let digit = k >> DIGIT_SHIFT;
        below += usize::from(digit < first);
        scratch[found] = k;
        found += usize::from(digit >= first && digit <= last);
    }
    (below, found)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn collect_digits_avx512(values: &[f32], first: u32, last: u32, scratch: &mut [u32]) -> (usize, usize) {
    use std::arch::x86_64::*;
    assert!(scratch.len() >= values.len());
    let lo = _mm512_set1_epi32(first as i32);
    let hi = _mm512_set1_epi32(last as i32);
    let top = _mm512_set1_epi32(i32::MIN);
    let (mut below, mut found) = (0usize, 0usize);
    let chunks = values.chunks_exact(16);
    let rest = chunks.remainder();
    for chunk in chunks {
        // SAFETY: `chunk` holds 16 values and `scratch` has room for every
        // value not yet written, so the compressed store stays in bounds.
        unsafe {
            let bits = _mm512_loadu_si512(chunk.as_ptr().cast());
            let keys = _mm512_xor_si512(bits, _mm512_or_si512(_mm512_srai_epi32::<31>(bits), top));
            let digits = _mm512_srli_epi32::<DIGIT_SHIFT>(keys);
            let under = _mm512_cmplt_epu32_mask(digits, lo);
            let inside = _mm512_cmpge_epu32_mask(digits, lo) & _mm512_cmple_epu32_mask(digits, hi);
            _mm512_mask_compressstoreu_epi32(scratch.as_mut_ptr().add(found).cast(), inside, keys);
            below += under.count_ones() as usize;
            found += inside.count_ones() as usize;
        }
    }
    for &v in rest {
        let k = order_key(v);
        let digit = k >> DIGIT_SHIFT;
        below += usize::from(digit < first);
        if digit >= first && digit <= last {
            scratch[found] = k;
            found += 1;
        }
    }
    (below, found)
}

/// The `lo`-th and `hi`-th smallest keys, `hi` being `lo` or `lo + 1`.
fn pick(keys: &mut [u32], lo: usize, hi: usize) -> (u32, u32) {
    let lower = *keys.select_nth_unstable(lo).1;
    let upper = if hi == lo {
        lower
    } else {
        keys[hi..].iter().copied().min().expect("rank in range")
    };
    (lower, upper)
}

/// Eccentricity for every instance.
pub fn eccentricity_values(dataset: &EmbeddingDataset, config: &EccentricityConfig) -> Result<Vec<f64>> {
    if dataset.len() < 2 {
        return Err(MeasureError::TooFewInstances(dataset.len()));
    }
    let (medians, variances) = column_stats(dataset);
    let scale: Vec<f64> = variances
        .iter()
        .map(|&v| {
            if v < MIN_VARIANCE {
                0.0
            } else {
                v.powf(-config.variance_exponent)
            }
        })
        .collect();
    Ok(dataset
        .features()
        .par_chunks_exact(dataset.dim())
        .map(|row| scaled_norm(row, &medians, &scale))
        .collect())
}

fn scaled_norm(row: &[f32], medians: &[f64], scale: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { scaled_norm_avx512(row, medians, scale) };
    }
    scaled_norm_lanes(row, medians, scale)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn scaled_norm_avx512(row: &[f32], medians: &[f64], scale: &[f64]) -> f64 {
    scaled_norm_lanes(row, medians, scale)
}

#[inline(always)]
fn scaled_norm_lanes(row: &[f32], medians: &[f64], scale: &[f64]) -> f64 {
    const LANES: usize = 16;
    let mut acc = [0f64; LANES];
    let chunks = row.chunks_exact(LANES).zip(medians.chunks_exact(LANES).zip(scale.chunks_exact(LANES)));
    for (x, (m, s)) in chunks {
        for l in 0..LANES {
            let z = (f64::from(x[l]) - m[l]) * s[l];
            acc[l] += z * z;
        }
    }
    let tail = row.len() / LANES * LANES;
    for (l, i) in (tail..row.len()).enumerate() {
        let z = (f64::from(row[i]) - medians[i]) * scale[i];
        acc[l] += z * z;
    }
    acc.iter().sum::<f64>().sqrt()
}
