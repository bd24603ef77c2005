//! Exact brute-force k-nearest neighbors in feature space.
//!
//! [`knn_all`] screens candidates with a blocked `f32` Gram-matrix product
//! (`|x|^2 + |y|^2 - 2 x.y` on mean-centered data) and then re-ranks every
//! candidate by the exact `f64` squared distance. A per-row rounding bound
//! decides whether the screened candidate set provably contains the true
//! neighbors; rows that fail the check are recomputed by a full scan. The
//! result is identical to sorting all exact distances by `(distance, index)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MeasureError, Result};
use crate::dataset::EmbeddingDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodConfig {
    pub k: usize,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

impl NeighborhoodConfig {
    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || n < 2 || self.k > n - 1 {
            return Err(MeasureError::NeighborCount {
                k: self.k,
                max: n.saturating_sub(1),
            });
        }
        Ok(())
    }
}

/// Squared Euclidean distance accumulated in `f64`. This is the reference
/// distance every neighbor ordering is defined by.
#[inline]
pub(crate) fn exact_sq_distance(a: &[f32], b: &[f32]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { exact_sq_distance_avx512(a, b) };
    }
    sq_distance_lanes(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn exact_sq_distance_avx512(a: &[f32], b: &[f32]) -> f64 {
    sq_distance_lanes(a, b)
}

/// Fixed lane structure, so every instruction set yields the same bits.
#[inline(always)]
fn sq_distance_lanes(a: &[f32], b: &[f32]) -> f64 {
    const LANES: usize = 32;
    let mut acc = [0f64; LANES];
    let (ac, bc) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..LANES {
            let d = f64::from(x[l]) - f64::from(y[l]);
            acc[l] += d * d;
        }
    }
    for (l, (&x, &y)) in ar.iter().zip(br).enumerate() {
        let d = f64::from(x) - f64::from(y);
        acc[l] += d * d;
    }
    acc.iter().sum()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn scan_row(dataset: &EmbeddingDataset, query: usize, k: usize) -> Vec<usize> {
    let q = dataset.row(query);
    let mut all: Vec<(f64, usize)> = (0..dataset.len())
        .filter(|&j| j != query)
        .map(|j| (exact_sq_distance(q, dataset.row(j)), j))
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance_then_index);
        all.truncate(k);
    }
    all.sort_unstable_by(by_distance_then_index);
    all.into_iter().map(|(_, j)| j).collect()
}

/// The `k` nearest other instances of `query`, nearest first; ties go to the
/// lower index.
pub fn knn(dataset: &EmbeddingDataset, query: usize, config: &NeighborhoodConfig) -> Result<Vec<usize>> {
    config.validate(dataset.len())?;
    if query >= dataset.len() {
        return Err(MeasureError::QueryOutOfRange(query));
    }
    Ok(scan_row(dataset, query, config.k))
}

/// Neighbor lists for every instance, `k` per row, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<u32>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

/// Candidates kept per row beyond `k` during screening.
const SCREEN_SLACK: usize = 12;
/// Wider margin for the coarser bf16 screen.
const TILE_SLACK: usize = 40;
const BLOCK: usize = 512;
const CHUNK: usize = 64;

/// The smallest screened distances seen for one row. Entries are appended
/// below the current threshold and compacted to the best `cap` when the
/// buffer doubles, so every rejected entry is at least the final worst.
#[derive(Clone)]
struct Candidates {
    items: Vec<(f32, u32)>,
    cap: usize,
    thresh: f32,
}

impl Candidates {
    fn new(cap: usize) -> Self {
        Self {
            items: Vec::new(),
            cap,
            thresh: f32::INFINITY,
        }
    }

    /// Returns the new admission threshold.
    #[inline]
    fn push(&mut self, d: f32, j: u32) -> f32 {
        self.items.push((d, j));
        if self.items.len() == 2 * self.cap {
            self.compact();
        }
        self.thresh
    }

    fn compact(&mut self) {
        if self.items.len() >= self.cap {
            self.items.select_nth_unstable_by(self.cap - 1, |a, b| a.0.total_cmp(&b.0));
            self.items.truncate(self.cap);
            self.thresh = self.items[self.cap - 1].0;
        }
    }

    /// Keeps only the best `cap`; call once screening is done.
    fn finish(&mut self) {
        self.compact();
    }

    fn is_full(&self) -> bool {
        self.items.len() == self.cap
    }

    fn worst(&self) -> f32 {
        self.items.iter().map(|c| c.0).fold(f32::NEG_INFINITY, f32::max)
    }
}

fn column_means(dataset: &EmbeddingDataset) -> Vec<f32> {
    let (n, d) = (dataset.len(), dataset.dim());
    let mut mean = vec![0f64; d];
    for row in dataset.features().chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    mean.iter().map(|m| (m / n as f64) as f32).collect()
}

/// Mean-centered copy of the features and the squared norm of each row.
fn centered(dataset: &EmbeddingDataset, mean: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let mut data = dataset.features().to_vec();
    let norms = data
        .par_chunks_exact_mut(dataset.dim())
        .map(|row| {
            let mut s = 0f64;
            for (v, m) in row.iter_mut().zip(mean) {
                *v -= m;
                s += f64::from(*v) * f64::from(*v);
            }
            s as f32
        })
        .collect();
    (data, norms)
}

/// `out[r * ld + c] = a_r . b_c` for row blocks `a` (`rows x d`) and `b` (`cols x d`).
fn sgemm_block(a: &[f32], b: &[f32], d: usize, out: &mut [f32], ld: usize) {
    let rows = a.len() / d;
    let cols = b.len() / d;
    assert!(rows == 0 || out.len() >= (rows - 1) * ld + cols);
    // SAFETY: the slices cover `rows x d`, `cols x d` and `rows x ld`
    // elements with the strides passed here.
    unsafe {
        matrixmultiply::sgemm(
            rows,
            d,
            cols,
            1.0,
            a.as_ptr(),
            d as isize,
            1,
            b.as_ptr(),
            1,
            d as isize,
            0.0,
            out.as_mut_ptr(),
            ld as isize,
            1,
        );
    }
}

/// Source of screening dot products and their per-row error bounds.
enum Screen {
    Sgemm { data: Vec<f32>, d: usize },
    #[cfg(all(target_arch = "x86_64", target_os = "linux"))]
    Tiles(super::amx::Panels),
}

impl Screen {
    /// The screen for the mean-centered features, with squared row norms.
    fn new(dataset: &EmbeddingDataset, backend: Backend) -> (Self, Vec<f32>) {
        let mean = column_means(dataset);
        #[cfg(all(target_arch = "x86_64", target_os = "linux"))]
        if backend == Backend::Auto
            && super::amx::available()
            && dataset.features().iter().all(|v| v.abs() <= super::amx::MAX_ABS / 2.0)
        {
            let (panels, norms) = super::amx::Panels::new(dataset.features(), &mean);
            return (Screen::Tiles(panels), norms);
        }
        let _ = backend;
        let (data, norms) = centered(dataset, &mean);
        (Screen::Sgemm { data, d: dataset.dim() }, norms)
    }

    /// Fills rows `r0..r1` x columns `c0..c1` of the Gram matrix into `out`
    /// and returns the row stride used.
    fn gram(&self, r0: usize, r1: usize, c0: usize, c1: usize, out: &mut [f32]) -> usize {
        match self {
            Screen::Sgemm { data, d } => {
                let ld = c1 - c0;
                sgemm_block(&data[r0 * d..r1 * d], &data[c0 * d..c1 * d], *d, out, ld);
                ld
            }
            #[cfg(all(target_arch = "x86_64", target_os = "linux"))]
            Screen::Tiles(panels) => {
                let ld = (c1 - c0).div_ceil(super::amx::TILE_EDGE) * super::amx::TILE_EDGE;
                panels.gram(r0, r1, c0, c1, out, ld);
                ld
            }
        }
    }

    fn slack(&self) -> usize {
        match self {
            Screen::Sgemm { .. } => SCREEN_SLACK,
            #[cfg(all(target_arch = "x86_64", target_os = "linux"))]
            Screen::Tiles(_) => TILE_SLACK,
        }
    }

    /// Bound on the screened squared distance error for any pair involving row `i`.
    fn distance_error(&self, i: usize, norm: f64, max_norm: f64) -> f64 {
        let unit = f64::from(f32::EPSILON) / 2.0;
        // Centering and forming `|x|^2 + |y|^2 - 2 x.y` in f32.
        let assembly = 16.0 * unit * (norm + max_norm);
        match self {
            Screen::Sgemm { d, .. } => 8.0 * (*d as f64 + 2.0) * unit * (norm + max_norm) + assembly,
            #[cfg(all(target_arch = "x86_64", target_os = "linux"))]
            Screen::Tiles(panels) => 2.0 * panels.dot_error(i) + assembly,
        }
    }
}

/// Feeds one Gram block into the candidate sets. `col_sets` is given when the
/// block is off-diagonal in the symmetric sweep and the transposed pairs must
/// be recorded too.
#[allow(clippy::too_many_arguments)]
fn absorb_block(
    gram: &[f32],
    ld: usize,
    row0: usize,
    row_norms: &[f32],
    row_sets: &mut [Candidates],
    row_thresh: &mut [f32],
    col0: usize,
    col_norms: &[f32],
    col_sets: Option<(&mut [Candidates], &mut [f32])>,
    dist: &mut [f32],
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at runtime.
        return unsafe {
            absorb_block_avx512(gram, ld, row0, row_norms, row_sets, row_thresh, col0, col_norms, col_sets, dist)
        };
    }
    absorb_block_impl(gram, ld, row0, row_norms, row_sets, row_thresh, col0, col_norms, col_sets, dist)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
#[allow(clippy::too_many_arguments)]
fn absorb_block_avx512(
    gram: &[f32],
    ld: usize,
    row0: usize,
    row_norms: &[f32],
    row_sets: &mut [Candidates],
    row_thresh: &mut [f32],
    col0: usize,
    col_norms: &[f32],
    col_sets: Option<(&mut [Candidates], &mut [f32])>,
    dist: &mut [f32],
) {
    absorb_block_impl(gram, ld, row0, row_norms, row_sets, row_thresh, col0, col_norms, col_sets, dist)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn absorb_block_impl(
    gram: &[f32],
    ld: usize,
    row0: usize,
    row_norms: &[f32],
    row_sets: &mut [Candidates],
    row_thresh: &mut [f32],
    col0: usize,
    col_norms: &[f32],
    mut col_sets: Option<(&mut [Candidates], &mut [f32])>,
    dist: &mut [f32],
) {
    let cols = col_norms.len();
    for (r, &nr) in row_norms.iter().enumerate() {
        let i = row0 + r;
        let g = &gram[r * ld..r * ld + cols];
        for ((dv, &gv), &nc) in dist.iter_mut().zip(g).zip(col_norms) {
            *dv = nr + nc - 2.0 * gv;
        }
        let mut start = 0;
        while start < cols {
            let end = (start + CHUNK).min(cols);
            let rt = row_thresh[r];
            let mut mask = below_mask(&dist[start..end], rt, col_sets.as_ref().map(|(_, ct)| &ct[start..end]));
            while mask != 0 {
                let c = start + mask.trailing_zeros() as usize;
                mask &= mask - 1;
                let j = col0 + c;
                if j == i {
                    continue;
                }
                let dv = dist[c];
                if dv < row_thresh[r] {
                    row_thresh[r] = row_sets[r].push(dv, j as u32);
                }
                if let Some((sets, thresh)) = col_sets.as_mut() {
                    if dv < thresh[c] {
                        thresh[c] = sets[c].push(dv, i as u32);
                    }
                }
            }
            start = end;
        }
    }
}

/// Bit `b` is set when `dist[b] < rt` or `dist[b] < ct[b]`; at most 64 entries.
#[inline]
fn below_mask(dist: &[f32], rt: f32, ct: Option<&[f32]>) -> u64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { below_mask_avx512(dist, rt, ct) };
    }
    let mut mask = 0u64;
    match ct {
        Some(ct) => {
            for (b, (&dv, &t)) in dist.iter().zip(ct).enumerate() {
                mask |= u64::from((dv < rt) | (dv < t)) << b;
            }
        }
        None => {
            for (b, &dv) in dist.iter().enumerate() {
                mask |= u64::from(dv < rt) << b;
            }
        }
    }
    mask
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn below_mask_avx512(dist: &[f32], rt: f32, ct: Option<&[f32]>) -> u64 {
    use std::arch::x86_64::*;
    debug_assert!(dist.len() <= 64 && ct.is_none_or(|c| c.len() == dist.len()));
    let rt = _mm512_set1_ps(rt);
    let mut mask = 0u64;
    for (lane, start) in (0..dist.len()).step_by(16).enumerate() {
        let live: __mmask16 = if dist.len() - start >= 16 { !0 } else { (1u16 << (dist.len() - start)) - 1 };
        // SAFETY: masked loads only touch the `live` elements, which are in bounds.
        let bits = unsafe {
            let dv = _mm512_maskz_loadu_ps(live, dist.as_ptr().add(start));
            let mut m = _mm512_mask_cmp_ps_mask::<_CMP_LT_OQ>(live, dv, rt);
            if let Some(ct) = ct {
                let t = _mm512_maskz_loadu_ps(live, ct.as_ptr().add(start));
                m |= _mm512_mask_cmp_ps_mask::<_CMP_LT_OQ>(live, dv, t);
            }
            m
        };
        mask |= u64::from(bits) << (16 * lane);
    }
    mask
}

fn screen_symmetric(screen: &Screen, norms: &[f32], cap: usize) -> Vec<Candidates> {
    let n = norms.len();
    let mut sets = vec![Candidates::new(cap); n];
    let mut thresh = vec![f32::INFINITY; n];
    let mut gram = vec![0f32; BLOCK * BLOCK];
    let mut dist = vec![0f32; BLOCK];
    for r0 in (0..n).step_by(BLOCK) {
        let r1 = (r0 + BLOCK).min(n);
        for c0 in (r0..n).step_by(BLOCK) {
            let c1 = (c0 + BLOCK).min(n);
            let ld = screen.gram(r0, r1, c0, c1, &mut gram);
            let (head, tail) = sets.split_at_mut(c0);
            let (thead, ttail) = thresh.split_at_mut(c0);
            if c0 == r0 {
                absorb_block(
                    &gram,
                    ld,
                    r0,
                    &norms[r0..r1],
                    &mut tail[..r1 - r0],
                    &mut ttail[..r1 - r0],
                    c0,
                    &norms[c0..c1],
                    None,
                    &mut dist[..c1 - c0],
                );
            } else {
                absorb_block(
                    &gram,
                    ld,
                    r0,
                    &norms[r0..r1],
                    &mut head[r0..r1],
                    &mut thead[r0..r1],
                    c0,
                    &norms[c0..c1],
                    Some((&mut tail[..c1 - c0], &mut ttail[..c1 - c0])),
                    &mut dist[..c1 - c0],
                );
            }
        }
    }
    sets
}

fn screen_parallel(screen: &Screen, norms: &[f32], cap: usize) -> Vec<Candidates> {
    let n = norms.len();
    let mut sets = vec![Candidates::new(cap); n];
    sets.par_chunks_mut(BLOCK).enumerate().for_each(|(b, row_sets)| {
        let r0 = b * BLOCK;
        let r1 = r0 + row_sets.len();
        let mut thresh = vec![f32::INFINITY; row_sets.len()];
        let mut gram = vec![0f32; BLOCK * BLOCK];
        let mut dist = vec![0f32; BLOCK];
        for c0 in (0..n).step_by(BLOCK) {
            let c1 = (c0 + BLOCK).min(n);
            let ld = screen.gram(r0, r1, c0, c1, &mut gram);
            absorb_block(
                &gram,
                ld,
                r0,
                &norms[r0..r1],
                row_sets,
                &mut thresh,
                c0,
                &norms[c0..c1],
                None,
                &mut dist[..c1 - c0],
            );
        }
    });
    sets
}

/// Screening implementation; `Auto` uses bf16 tile instructions when present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Backend {
    Auto,
    #[cfg_attr(not(test), allow(dead_code))]
    Portable,
}

/// Exact neighbor lists for all instances.
pub fn knn_all(dataset: &EmbeddingDataset, config: &NeighborhoodConfig) -> Result<NeighborTable> {
    knn_all_with(dataset, config, Backend::Auto)
}

pub(crate) fn knn_all_with(dataset: &EmbeddingDataset, config: &NeighborhoodConfig, backend: Backend) -> Result<NeighborTable> {
    let n = dataset.len();
    config.validate(n)?;
    let k = config.k;

    let (screen, norms) = Screen::new(dataset, backend);
    let cap = (k + screen.slack()).min(n - 1);
    let mut sets = if rayon::current_num_threads() > 1 {
        screen_parallel(&screen, &norms, cap)
    } else {
        screen_symmetric(&screen, &norms, cap)
    };
    sets.iter_mut().for_each(Candidates::finish);

    let max_norm = f64::from(norms.iter().copied().fold(0f32, f32::max));
    let indices: Vec<u32> = sets
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, set)| {
            let q = dataset.row(i);
            let complete = !set.is_full() || cap == n - 1;
            let bound = screen.distance_error(i, f64::from(norms[i]), max_norm) + 1e-30;
            let mut screened = set.items.clone();
            screened.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            // Candidates whose screened lower bound exceeds the k-th upper bound
            // cannot be among the nearest k.
            let reach = if complete {
                f64::INFINITY
            } else {
                (f64::from(screened[k - 1].0) + bound) * (1.0 + 1e-12)
            };
            let mut exact: Vec<(f64, usize)> = screened
                .iter()
                .take_while(|&&(sd, _)| f64::from(sd) - bound <= reach)
                .map(|&(_, j)| (exact_sq_distance(q, dataset.row(j as usize)), j as usize))
                .collect();
            exact.sort_unstable_by(by_distance_then_index);
            let proven = complete || {
                let kth = exact[k - 1].0;
                f64::from(set.worst()) - bound > kth * (1.0 + 1e-12)
            };
            let row: Vec<usize> = if proven {
                exact.into_iter().take(k).map(|(_, j)| j).collect()
            } else {
                scan_row(dataset, i, k)
            };
            row.into_iter().map(|j| j as u32)
        })
        .collect();
    Ok(NeighborTable { k, indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassSchema;
    use rand::{Rng, SeedableRng};

    pub(crate) fn dataset(d: usize, features: Vec<f32>) -> EmbeddingDataset {
        let n = features.len() / d;
        EmbeddingDataset::new(
            ClassSchema::new(["a", "b"]).unwrap(),
            (0..n).map(|i| i.to_string()).collect(),
            features,
            d,
            None,
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_example() {
        let ds = dataset(1, vec![0.0, 1.0, 10.0]);
        assert_eq!(knn(&ds, 0, &NeighborhoodConfig { k: 1 }).unwrap(), vec![1]);
    }

    #[test]
    fn duplicate_wins() {
        let ds = dataset(2, vec![5.0, 5.0, 0.0, 0.0, 5.0, 5.0, 4.0, 4.0]);
        assert_eq!(knn(&ds, 0, &NeighborhoodConfig { k: 1 }).unwrap(), vec![2]);
    }

    #[test]
    fn exhaustive_neighborhood() {
        let ds = dataset(1, vec![3.0, 1.0, 2.0, 0.0]);
        let mut got = knn(&ds, 0, &NeighborhoodConfig { k: 3 }).unwrap();
        assert_eq!(got, vec![2, 1, 3]);
        got.sort();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn ties_break_by_index() {
        let ds = dataset(1, vec![0.0, 1.0, -1.0, 1.0]);
        assert_eq!(knn(&ds, 0, &NeighborhoodConfig { k: 2 }).unwrap(), vec![1, 2]);
        let all = knn_all(&ds, &NeighborhoodConfig { k: 2 }).unwrap();
        assert_eq!(all.row(0), &[1, 2]);
        assert_eq!(all.row(1), &[3, 0]);
    }

    #[test]
    fn k_out_of_range() {
        let ds = dataset(1, vec![0.0, 1.0, 2.0]);
        assert!(matches!(
            knn(&ds, 0, &NeighborhoodConfig { k: 3 }),
            Err(MeasureError::NeighborCount { k: 3, max: 2 })
        ));
        assert!(knn(&ds, 0, &NeighborhoodConfig { k: 0 }).is_err());
        assert!(matches!(
            knn(&ds, 7, &NeighborhoodConfig { k: 1 }),
            Err(MeasureError::QueryOutOfRange(7))
        ));
    }

    #[test]
    fn table_matches_scan_across_blocks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (n, d) = (BLOCK + 300, 24);
        let f: Vec<f32> = (0..n * d).map(|_| rng.random::<f32>()).collect();
        let ds = dataset(d, f);
        let cfg = NeighborhoodConfig { k: 7 };
        for backend in [Backend::Auto, Backend::Portable] {
            let table = knn_all_with(&ds, &cfg, backend).unwrap();
            for i in (0..n).step_by(37) {
                let expect: Vec<u32> = knn(&ds, i, &cfg).unwrap().into_iter().map(|j| j as u32).collect();
                assert_eq!(table.row(i), &expect[..], "row {i} {backend:?}");
            }
        }
    }

    #[test]
    fn many_exact_ties_fall_back_correctly() {
        // Integer lattice with heavy distance ties.
        let mut f = Vec::new();
        for x in 0..12 {
            for y in 0..12 {
                f.extend([x as f32, y as f32]);
            }
        }
        let ds = dataset(2, f);
        let cfg = NeighborhoodConfig { k: 6 };
        for backend in [Backend::Auto, Backend::Portable] {
            let table = knn_all_with(&ds, &cfg, backend).unwrap();
            for i in 0..ds.len() {
                let expect: Vec<u32> = knn(&ds, i, &cfg).unwrap().into_iter().map(|j| j as u32).collect();
                assert_eq!(table.row(i), &expect[..], "{backend:?}");
            }
        }
    }

    #[test]
    fn wide_rows_match_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (n, d) = (700, 333);
        let f: Vec<f32> = (0..n * d).map(|_| rng.random::<f32>() * 3.0 - 1.0).collect();
        let ds = dataset(d, f);
        let cfg = NeighborhoodConfig { k: 20 };
        let auto = knn_all_with(&ds, &cfg, Backend::Auto).unwrap();
        let portable = knn_all_with(&ds, &cfg, Backend::Portable).unwrap();
        assert_eq!(auto.indices, portable.indices);
        for i in (0..n).step_by(29) {
            let expect: Vec<u32> = knn(&ds, i, &cfg).unwrap().into_iter().map(|j| j as u32).collect();
            assert_eq!(auto.row(i), &expect[..]);
        }
    }
}
