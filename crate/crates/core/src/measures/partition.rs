use super::PropertyScores;

/// Instances grouped by predicted class, each group sorted ascending by
/// value with ties broken by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partitions {
    by_class: Vec<Vec<(usize, f64)>>,
}

impl Partitions {
    /// Partitions the instances accepted by `include` (normally: unlabeled ones).
    pub fn build(scores: &PropertyScores, num_classes: usize, include: impl Fn(usize) -> bool) -> Self {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, (&v, c)) in scores.values.iter().zip(&scores.predicted_class).enumerate() {
            if include(i) {
                by_class[c.index()].push((i, v));
            }
        }
        for part in &mut by_class {
            part.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        }
        Self { by_class }
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    /// Empty slice for classes outside the schema.
    pub fn class(&self, class: usize) -> &[(usize, f64)] {
        self.by_class.get(class).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.by_class.iter().map(Vec::as_slice)
    }

    pub fn total(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }
}

/// Partitions every instance in `scores` by its predicted class.
pub fn partition_by_class(scores: &PropertyScores, num_classes: usize) -> Partitions {
    Partitions::build(scores, num_classes, |_| true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassId;
    use crate::measures::Measure;

    fn scores(values: Vec<f64>, classes: Vec<u32>) -> PropertyScores {
        PropertyScores {
            measure: Measure::MinMargin,
            values,
            predicted_class: classes.into_iter().map(ClassId).collect(),
        }
    }

    #[test]
    fn single_class_and_empty() {
        let p = partition_by_class(&scores(vec![0.3, 0.1, 0.2], vec![0, 0, 0]), 2);
        assert_eq!(p.class(0), &[(1, 0.1), (2, 0.2), (0, 0.3)]);
        assert!(p.class(1).is_empty());
        let empty = partition_by_class(&scores(vec![], vec![]), 3);
        assert_eq!(empty.num_classes(), 3);
        assert_eq!(empty.total(), 0);
    }

    #[test]
    fn sorted_by_value_then_index() {
        let p = partition_by_class(&scores(vec![0.9, 0.1, 0.5, 0.5], vec![1, 1, 0, 0]), 2);
        assert_eq!(p.class(1), &[(1, 0.1), (0, 0.9)]);
        assert_eq!(p.class(0), &[(2, 0.5), (3, 0.5)]);
    }

    #[test]
    fn filter_excludes_instances() {
        let p = Partitions::build(&scores(vec![0.9, 0.1], vec![0, 0]), 2, |i| i != 1);
        assert_eq!(p.class(0), &[(0, 0.9)]);
    }
}
