//! Seeded synthetic datasets for simulations, tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, ClassSchema, EmbeddingDataset};
use crate::measures::ProbabilityMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub per_class: Vec<usize>,
    pub dim: usize,
    /// Class centers as rows; `None` places them on random directions at `spread`.
    pub centers: Option<Vec<Vec<f64>>>,
    pub spread: f64,
    pub std: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// 3 x 500 points in 32 dimensions: classes 0 and 1 sit 2.5 standard
    /// deviations apart, class 2 lies 6 away from both on an orthogonal axis.
    pub fn overlapping_triplet(seed: u64) -> Self {
        let dim = 32;
        let mut centers = vec![vec![0.0; dim]; 3];
        centers[1][0] = 2.5;
        centers[2][1] = 6.0;
        Self {
            per_class: vec![500; 3],
            dim,
            centers: Some(centers),
            spread: 0.0,
            std: 1.0,
            seed,
        }
    }
}

/// Isotropic Gaussian clusters with ground truth, ids `"0".."n-1"`.
pub fn gaussian_blobs(spec: &BlobSpec) -> EmbeddingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.per_class.len();
    let centers: Vec<Vec<f64>> = match &spec.centers {
        Some(c) => c.clone(),
        None => (0..k)
            .map(|_| {
                let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| x / norm * spec.spread).collect()
            })
            .collect(),
    };
    assert_eq!(centers.len(), k, "one center per class");
    let noise = Normal::new(0.0, spec.std).expect("finite standard deviation");
    let mut features = Vec::new();
    let mut truth = Vec::new();
    for (c, &count) in spec.per_class.iter().enumerate() {
        for _ in 0..count {
            features.extend(centers[c].iter().map(|&m| (m + noise.sample(&mut rng)) as f32));
            truth.push(ClassId::from(c));
        }
    }
    // Interleave classes so index order carries no label information.
    let n = truth.len();
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut shuffled = Vec::with_capacity(features.len());
    for &i in &order {
        shuffled.extend_from_slice(&features[i * spec.dim..(i + 1) * spec.dim]);
    }
    let truth = order.iter().map(|&i| truth[i]).collect();
    EmbeddingDataset::new(
        ClassSchema::new((0..k).map(|c| format!("class{c}"))).expect("at least two classes"),
        (0..n).map(|i| i.to_string()).collect(),
        shuffled,
        spec.dim,
        Some(truth),
    )
    .expect("generated data is finite")
}

/// Standard-normal features without labels, as used by the benchmark.
pub fn random_dataset(n: usize, d: usize, k: usize, seed: u64) -> EmbeddingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<f32> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    EmbeddingDataset::new(
        ClassSchema::new((0..k).map(|c| format!("class{c}"))).expect("at least two classes"),
        (0..n).map(|i| i.to_string()).collect(),
        features,
        d,
        None,
    )
    .expect("generated data is finite")
}

/// Softmax of standard-normal logits.
pub fn random_probabilities(n: usize, k: usize, seed: u64) -> ProbabilityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let logits: Vec<f64> = (0..k).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        data.extend(exp.iter().map(|e| e / sum));
    }
    ProbabilityMatrix::new(n, k, data).expect("softmax rows are distributions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BlobSpec {
        BlobSpec {
            per_class: vec![5, 7],
            dim: 3,
            centers: None,
            spread: 4.0,
            std: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn blobs_shape_and_determinism() {
        let a = gaussian_blobs(&spec());
        assert_eq!((a.len(), a.dim(), a.num_classes()), (12, 3, 2));
        let gt = a.ground_truth().unwrap();
        assert_eq!(gt.iter().filter(|c| c.0 == 1).count(), 7);
        let b = gaussian_blobs(&spec());
        assert_eq!(a.features(), b.features());
        let c = gaussian_blobs(&BlobSpec { seed: 4, ..spec() });
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn random_rows_are_distributions() {
        let p = random_probabilities(20, 4, 1);
        for i in 0..20 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(random_dataset(4, 2, 3, 9).features(), random_dataset(4, 2, 3, 9).features());
    }
}
