use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, Result};
use crate::dataset::{ClassId, LabelLedger, LabelState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    /// Loss weight of every batch-labeled example.
    pub batch_weight: f64,
    /// Per class, at most `batch_multiplier * c_min` batch examples are used.
    pub batch_multiplier: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            batch_weight: 0.1,
            batch_multiplier: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub index: usize,
    pub class: ClassId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub instance_examples: Vec<(usize, ClassId)>,
    pub batch_examples: Vec<(usize, ClassId)>,
    pub batch_weight: f64,
    /// Smallest instance-label count over classes that have any instance label.
    pub c_min: usize,
    /// Classes holding batch labels but no instance label; they are excluded
    /// from `c_min` and the run is flagged through this list.
    pub classes_without_instance_labels: Vec<ClassId>,
}

impl TrainingSet {
    pub fn examples(&self) -> Vec<Example> {
        let instance = self.instance_examples.iter().map(|&(index, class)| Example {
            index,
            class,
            weight: 1.0,
        });
        let batch = self.batch_examples.iter().map(|&(index, class)| Example {
            index,
            class,
            weight: self.batch_weight,
        });
        instance.chain(batch).collect()
    }

    pub fn is_flagged(&self) -> bool {
        !self.classes_without_instance_labels.is_empty()
    }
}

/// Collects all instance labels and, per class, a seeded uniform sample of at
/// most `batch_multiplier * c_min` batch labels.
pub fn build_training_set(ledger: &LabelLedger, params: &TrainingParams, seed: u64) -> Result<TrainingSet> {
    let k = ledger.num_classes();
    let mut instance_examples = Vec::new();
    let mut batch_by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut instance_counts = vec![0usize; k];
    for (i, state) in ledger.states().enumerate() {
        match state {
            LabelState::Instance(c) => {
                instance_examples.push((i, c));
                instance_counts[c.index()] += 1;
            }
            LabelState::Batch(c) => batch_by_class[c.index()].push(i),
            LabelState::Unlabeled => {}
        }
    }
    let c_min = instance_counts
        .iter()
        .copied()
        .filter(|&c| c > 0)
        .min()
        .ok_or(ClassifierError::Untrained)?;
    let cap = params.batch_multiplier.saturating_mul(c_min);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch_examples = Vec::new();
    let mut classes_without_instance_labels = Vec::new();
    for (c, candidates) in batch_by_class.iter().enumerate() {
        if candidates.is_empty() {
            continue;
        }
        if instance_counts[c] == 0 {
            classes_without_instance_labels.push(ClassId::from(c));
        }
        let class = ClassId::from(c);
        if candidates.len() <= cap {
            batch_examples.extend(candidates.iter().map(|&i| (i, class)));
        } else {
            let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), cap)
                .into_iter()
                .map(|j| candidates[j])
                .collect();
            picked.sort_unstable();
            batch_examples.extend(picked.into_iter().map(|i| (i, class)));
        }
    }

    Ok(TrainingSet {
        instance_examples,
        batch_examples,
        batch_weight: params.batch_weight,
        c_min,
        classes_without_instance_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(instance: &[(usize, usize)], batch: &[(usize, usize)]) -> LabelLedger {
        let total: usize = instance.iter().chain(batch).map(|(_, n)| n).sum();
        let mut l = LabelLedger::new(total, 3);
        let mut next = 0;
        for &(c, n) in instance {
            for _ in 0..n {
                l.label_instance(next, ClassId::from(c)).unwrap();
                next += 1;
            }
        }
        for &(c, n) in batch {
            let ix: Vec<usize> = (next..next + n).collect();
            l.label_batch(&ix, ClassId::from(c)).unwrap();
            next += n;
        }
        l
    }

    fn per_class(ts: &TrainingSet, c: u32) -> usize {
        ts.batch_examples.iter().filter(|(_, k)| k.0 == c).count()
    }

    #[test]
    fn cap_is_ten_times_c_min() {
        let l = ledger(&[(0, 5), (1, 12)], &[(0, 300), (1, 20)]);
        let ts = build_training_set(&l, &TrainingParams::default(), 7).unwrap();
        assert_eq!(ts.c_min, 5);
        assert_eq!(per_class(&ts, 0), 50);
        assert_eq!(per_class(&ts, 1), 20);
        assert_eq!(ts.instance_examples.len(), 17);
        assert!(!ts.is_flagged());
        assert_eq!(ts, build_training_set(&l, &TrainingParams::default(), 7).unwrap());
        assert_ne!(
            ts.batch_examples,
            build_training_set(&l, &TrainingParams::default(), 8).unwrap().batch_examples
        );
    }

    #[test]
    fn weights_follow_provenance() {
        let l = ledger(&[(0, 1), (1, 1)], &[(0, 3)]);
        let ex = build_training_set(&l, &TrainingParams::default(), 0).unwrap().examples();
        assert_eq!(ex.iter().filter(|e| e.weight == 1.0).count(), 2);
        assert_eq!(ex.iter().filter(|e| e.weight == 0.1).count(), 3);
    }

    #[test]
    fn no_batch_labels() {
        let l = ledger(&[(0, 2), (1, 2)], &[]);
        assert!(build_training_set(&l, &TrainingParams::default(), 0).unwrap().batch_examples.is_empty());
    }

    #[test]
    fn c_min_over_classes_with_instance_labels() {
        let l = ledger(&[(1, 4)], &[(0, 100), (1, 100)]);
        let ts = build_training_set(&l, &TrainingParams::default(), 0).unwrap();
        assert_eq!(ts.c_min, 4);
        assert_eq!(per_class(&ts, 0), 40);
        assert_eq!(ts.classes_without_instance_labels, vec![ClassId(0)]);
    }

    #[test]
    fn no_instance_labels_is_untrained() {
        let l = ledger(&[], &[(0, 10)]);
        assert!(matches!(
            build_training_set(&l, &TrainingParams::default(), 0),
            Err(ClassifierError::Untrained)
        ));
    }

    proptest! {
        #[test]
        fn more_instance_labels_never_shrink_batch_usage(
            base in 1usize..6,
            extra in 0usize..6,
            batch in 0usize..120,
        ) {
            let small = ledger(&[(0, base), (1, base)], &[(0, batch)]);
            let large = ledger(&[(0, base + extra), (1, base + extra)], &[(0, batch)]);
            let p = TrainingParams::default();
            let a = per_class(&build_training_set(&small, &p, 1).unwrap(), 0);
            let b = per_class(&build_training_set(&large, &p, 1).unwrap(), 0);
            prop_assert!(b >= a);
        }
    }
}
