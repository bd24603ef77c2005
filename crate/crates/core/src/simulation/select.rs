//! Instance-selection rules of the simulated labelers.

use crate::dataset::ClassId;
use crate::measures::Partitions;

fn by_value_desc(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Splits `quota` evenly over the non-empty partitions (largest remainder,
/// leftover seats to the lowest class ids), takes each partition's
/// highest-value instances, and fills any shortfall from the remaining
/// instances by descending value.
pub fn select_instance_candidates(partitions: &Partitions, quota: usize) -> Vec<usize> {
    let non_empty: Vec<usize> = (0..partitions.num_classes())
        .filter(|&c| !partitions.class(c).is_empty())
        .collect();
    if non_empty.is_empty() || quota == 0 {
        return Vec::new();
    }
    let share = quota / non_empty.len();
    let extra = quota % non_empty.len();

    let mut picked = Vec::with_capacity(quota);
    let mut leftovers: Vec<(usize, f64)> = Vec::new();
    for (rank, &c) in non_empty.iter().enumerate() {
        let seats = share + usize::from(rank < extra);
        let part = partitions.class(c);
        let take = seats.min(part.len());
        let (rest, top) = part.split_at(part.len() - take);
        picked.extend(top.iter().rev().map(|&(i, _)| i));
        leftovers.extend_from_slice(rest);
    }
    if picked.len() < quota {
        leftovers.sort_by(by_value_desc);
        let missing = quota - picked.len();
        picked.extend(leftovers.iter().take(missing).map(|&(i, _)| i));
    }
    picked
}

/// Longest prefix of an ascending partition whose members are correctly
/// predicted as `class`.
pub fn select_batch_prefix(partition: &[(usize, f64)], class: ClassId, ground_truth: &[ClassId]) -> Vec<usize> {
    partition
        .iter()
        .map(|&(i, _)| i)
        .take_while(|&i| ground_truth[i] == class)
        .collect()
}

/// Globally highest values, ties by lower index.
pub fn al_select(candidates: &[(usize, f64)], quota: usize) -> Vec<usize> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(by_value_desc);
    sorted.into_iter().take(quota).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Measure, PropertyScores};
    use proptest::prelude::*;

    fn partitions(values: &[f64], classes: &[u32], k: usize) -> Partitions {
        let scores = PropertyScores {
            measure: Measure::MinMargin,
            values: values.to_vec(),
            predicted_class: classes.iter().map(|&c| ClassId(c)).collect(),
        };
        Partitions::build(&scores, k, |_| true)
    }

    #[test]
    fn one_per_class_with_ten_classes() {
        let values: Vec<f64> = (0..50).map(|i| f64::from(i) / 50.0).collect();
        let classes: Vec<u32> = (0..50).map(|i| i % 10).collect();
        let picked = select_instance_candidates(&partitions(&values, &classes, 10), 10);
        assert_eq!(picked, (40..50).collect::<Vec<_>>());
    }

    #[test]
    fn even_split_and_redistribution() {
        let values: Vec<f64> = (0..20).map(f64::from).collect();
        let classes: Vec<u32> = (0..20).map(|i| i % 2).collect();
        let picked = select_instance_candidates(&partitions(&values, &classes, 2), 10);
        assert_eq!(picked, vec![18, 16, 14, 12, 10, 19, 17, 15, 13, 11]);

        let one_sided = select_instance_candidates(&partitions(&values, &[0; 20], 2), 10);
        assert_eq!(one_sided, (10..20).rev().collect::<Vec<_>>());

        // Class 1 holds two instances; the missing three seats go to class 0.
        let mut classes = vec![0u32; 20];
        classes[0] = 1;
        classes[1] = 1;
        let picked = select_instance_candidates(&partitions(&values, &classes, 2), 10);
        assert_eq!(picked, vec![19, 18, 17, 16, 15, 1, 0, 14, 13, 12]);
    }

    #[test]
    fn too_few_instances_takes_all() {
        let picked = select_instance_candidates(&partitions(&[0.1, 0.2, 0.3], &[0, 1, 2], 3), 10);
        assert_eq!(picked.len(), 3);
    }

    #[test]
    fn prefix_examples() {
        let part = [(0, 0.1), (1, 0.2), (2, 0.3), (3, 0.4)];
        let gt = [ClassId(1), ClassId(1), ClassId(0), ClassId(1)];
        assert_eq!(select_batch_prefix(&part, ClassId(1), &gt), vec![0, 1]);
        assert!(select_batch_prefix(&part, ClassId(0), &gt).is_empty());
        assert_eq!(select_batch_prefix(&part, ClassId(1), &[ClassId(1); 4]).len(), 4);
    }

    #[test]
    fn al_examples() {
        assert_eq!(al_select(&[(0, 0.9), (1, 0.1), (2, 0.5)], 2), vec![0, 2]);
        assert_eq!(al_select(&[(0, 0.9), (1, 0.1)], 5).len(), 2);
        assert_eq!(al_select(&[(3, 0.5), (1, 0.5), (2, 0.5)], 2), vec![1, 2]);
    }

    proptest! {
        #[test]
        fn instance_selection_is_distinct_and_sized(
            values in prop::collection::vec(0.0f64..1.0, 0..60),
            seed in any::<u64>(),
            k in 2usize..6,
            quota in 0usize..15,
        ) {
            let classes: Vec<u32> = (0..values.len()).map(|i| ((i as u64 ^ seed) % k as u64) as u32).collect();
            let p = partitions(&values, &classes, k);
            let picked = select_instance_candidates(&p, quota);
            prop_assert_eq!(picked.len(), quota.min(values.len()));
            let set: std::collections::HashSet<_> = picked.iter().collect();
            prop_assert_eq!(set.len(), picked.len());
        }

        #[test]
        fn prefix_is_always_correct(truth in prop::collection::vec(0u32..2, 0..30)) {
            let gt: Vec<ClassId> = truth.iter().map(|&c| ClassId(c)).collect();
            let part: Vec<(usize, f64)> = (0..gt.len()).map(|i| (i, i as f64)).collect();
            for &i in &select_batch_prefix(&part, ClassId(0), &gt) {
                prop_assert_eq!(gt[i], ClassId(0));
            }
        }
    }
}
