use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ClassId, DatasetError, EmbeddingDataset, LabelLedger, LabelState, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Instance,
    Batch,
    Predicted,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Instance => "instance",
            Provenance::Batch => "batch",
            Provenance::Predicted => "predicted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: String,
    pub class_id: ClassId,
    pub provenance: Provenance,
}

/// One record per instance: ledger labels win, unlabeled instances take the
/// model prediction.
pub fn export_labels(
    dataset: &EmbeddingDataset,
    ledger: &LabelLedger,
    predictions: Option<&[ClassId]>,
) -> Result<Vec<ExportRecord>> {
    if ledger.len() != dataset.len() {
        return Err(DatasetError::LengthMismatch {
            expected: dataset.len(),
            found: ledger.len(),
        });
    }
    if let Some(p) = predictions {
        if p.len() != dataset.len() {
            return Err(DatasetError::LengthMismatch {
                expected: dataset.len(),
                found: p.len(),
            });
        }
    }
    let unlabeled = ledger.counts().unlabeled;
    if unlabeled > 0 && predictions.is_none() {
        return Err(DatasetError::MissingPredictions { count: unlabeled });
    }
    Ok((0..dataset.len())
        .map(|i| {
            let (class_id, provenance) = match ledger.state(i) {
                LabelState::Instance(c) => (c, Provenance::Instance),
                LabelState::Batch(c) => (c, Provenance::Batch),
                LabelState::Unlabeled => (
                    predictions.expect("checked above")[i],
                    Provenance::Predicted,
                ),
            };
            ExportRecord {
                id: dataset.id(i).to_string(),
                class_id,
                provenance,
            }
        })
        .collect())
}

/// Writes `id,class_id,provenance` CSV.
pub fn write_export_csv<W: Write>(records: &[ExportRecord], writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "class_id", "provenance"])?;
    for r in records {
        w.write_record([r.id.as_str(), &r.class_id.to_string(), r.provenance.as_str()])?;
    }
    w.flush()
}

/// Fraction of records whose class matches the dataset's ground truth.
pub fn export_accuracy(records: &[ExportRecord], dataset: &EmbeddingDataset) -> Result<f64> {
    let gt = dataset.ground_truth().ok_or(DatasetError::MissingGroundTruth)?;
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for r in records {
        let i = dataset
            .index_of(&r.id)
            .ok_or_else(|| DatasetError::UnknownId(r.id.clone()))?;
        if gt[i] == r.class_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassSchema;
    use proptest::prelude::*;

    fn dataset(n: usize, gt: Option<Vec<u32>>) -> EmbeddingDataset {
        EmbeddingDataset::new(
            ClassSchema::new(["c0", "c1"]).unwrap(),
            (0..n).map(|i| format!("id{i}")).collect(),
            vec![0.0; n],
            1,
            gt.map(|v| v.into_iter().map(ClassId).collect()),
        )
        .unwrap()
    }

    #[test]
    fn exhaustive_labeling_has_no_predictions() {
        let ds = dataset(2, None);
        let mut l = LabelLedger::new(2, 2);
        l.label_instance(0, ClassId(1)).unwrap();
        l.label_batch(&[1], ClassId(0)).unwrap();
        let out = export_labels(&ds, &l, None).unwrap();
        assert!(out.iter().all(|r| r.provenance != Provenance::Predicted));
    }

    #[test]
    fn cold_export_is_all_predicted() {
        let ds = dataset(3, None);
        let l = LabelLedger::new(3, 2);
        let out = export_labels(&ds, &l, Some(&[ClassId(1); 3])).unwrap();
        assert!(out.iter().all(|r| r.provenance == Provenance::Predicted));
        assert!(matches!(
            export_labels(&ds, &l, None),
            Err(DatasetError::MissingPredictions { count: 3 })
        ));
    }

    #[test]
    fn ledger_overrides_prediction() {
        let ds = dataset(2, None);
        let mut l = LabelLedger::new(2, 2);
        l.label_instance(0, ClassId(1)).unwrap();
        let out = export_labels(&ds, &l, Some(&[ClassId(0), ClassId(0)])).unwrap();
        assert_eq!(
            out,
            vec![
                ExportRecord {
                    id: "id0".into(),
                    class_id: ClassId(1),
                    provenance: Provenance::Instance
                },
                ExportRecord {
                    id: "id1".into(),
                    class_id: ClassId(0),
                    provenance: Provenance::Predicted
                },
            ]
        );
        let mut csv = Vec::new();
        write_export_csv(&out, &mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "id,class_id,provenance\nid0,1,instance\nid1,0,predicted\n"
        );
    }

    #[test]
    fn accuracy_cases() {
        let ds = dataset(4, Some(vec![0, 1, 0, 1]));
        let l = LabelLedger::new(4, 2);
        let exact = export_labels(&ds, &l, Some(&[0, 1, 0, 1].map(ClassId))).unwrap();
        assert_eq!(export_accuracy(&exact, &ds).unwrap(), 1.0);
        let half = export_labels(&ds, &l, Some(&[0, 0, 0, 0].map(ClassId))).unwrap();
        assert_eq!(export_accuracy(&half, &ds).unwrap(), 0.5);
        let none = export_labels(&ds, &l, Some(&[1, 0, 1, 0].map(ClassId))).unwrap();
        assert_eq!(export_accuracy(&none, &ds).unwrap(), 0.0);
        assert!(matches!(
            export_accuracy(&exact, &dataset(4, None)),
            Err(DatasetError::MissingGroundTruth)
        ));
    }

    proptest! {
        #[test]
        fn cold_export_lists_every_id_once(n in 1usize..60, class in 0u32..2) {
            let ds = dataset(n, None);
            let out = export_labels(&ds, &LabelLedger::new(n, 2), Some(&vec![ClassId(class); n])).unwrap();
            let mut ids: Vec<_> = out.iter().map(|r| r.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }

        #[test]
        fn accuracy_ignores_record_order(
            gt in prop::collection::vec(0u32..2, 1..40),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = gt.len();
            let ds = dataset(n, Some(gt.clone()));
            let preds: Vec<ClassId> = (0..n).map(|i| ClassId(((i as u64 ^ seed) & 1) as u32)).collect();
            let mut out = export_labels(&ds, &LabelLedger::new(n, 2), Some(&preds)).unwrap();
            let before = export_accuracy(&out, &ds).unwrap();
            out.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(before, export_accuracy(&out, &ds).unwrap());
        }
    }
}
