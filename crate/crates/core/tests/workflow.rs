use std::io::BufReader;
use std::sync::Arc;

use cvil_core::dataset::{export_accuracy, ingest, write_binary, write_csv, Provenance};
use cvil_core::density::RangeSelection;
use cvil_core::session::{BatchLabelAction, Session, SessionConfig};
use cvil_core::simulation::synthetic::{gaussian_blobs, BlobSpec};
use cvil_core::simulation::{run_simulation, SimulationConfig, Strategy};
use cvil_core::{ClassId, ClassSchema, EmbeddingDataset, LabelState, Measure};

fn blobs(per_class: usize, seed: u64) -> EmbeddingDataset {
    gaussian_blobs(&BlobSpec {
        per_class: vec![per_class; 3],
        dim: 4,
        centers: None,
        spread: 6.0,
        std: 1.0,
        seed,
    })
}

fn schema() -> ClassSchema {
    ClassSchema::new(["a", "b", "c"]).unwrap()
}

#[test]
fn csv_and_binary_ingest_agree() {
    let dir = tempfile::tempdir().unwrap();
    let ds = blobs(20, 1);
    let csv = dir.path().join("d.csv");
    let bin = dir.path().join("d.bin");
    write_csv(&ds, std::fs::File::create(&csv).unwrap()).unwrap();
    write_binary(&ds, std::fs::File::create(&bin).unwrap()).unwrap();

    let from_csv = ingest(&csv, schema(), None, None).unwrap();
    let from_bin = ingest(&bin, schema(), None, None).unwrap();
    assert_eq!(from_csv.features(), ds.features());
    assert_eq!(from_bin.features(), ds.features());
    assert_eq!(from_csv.ground_truth(), from_bin.ground_truth());
    assert_eq!(from_csv.ids(), from_bin.ids());
}

#[test]
fn labeling_session_exports_every_instance() {
    let ds = Arc::new(blobs(40, 2));
    let gt = ds.ground_truth().unwrap().to_vec();
    let mut session = Session::new(ds.clone(), SessionConfig::default());
    assert!(session.export().is_err());

    for i in session.cold_start_sample(15, 3).unwrap() {
        session.label_instance(ds.id(i), gt[i]).unwrap();
    }
    session.retrain(5).unwrap();
    for measure in [Measure::Eccentricity, Measure::Disagreement, Measure::MinMargin] {
        session.set_measure(measure).unwrap();
        assert_eq!(session.scores().unwrap().values.len(), ds.len());
    }

    let class = ClassId(2);
    let curve = session.density(class).unwrap().expect("class 2 has predictions");
    assert!((curve.integral() - 1.0).abs() < 0.02);
    let selection = RangeSelection { class_id: class, lo: curve.min, hi: curve.max };
    let preview = session.preview(&selection, 5).unwrap();
    let applied = session
        .label_batch(&BatchLabelAction { selection, target_class: class, override_mismatch: false })
        .unwrap();
    assert_eq!(applied, preview.total);
    assert!(applied > 0);

    let records = session.export().unwrap();
    assert_eq!(records.len(), ds.len());
    for (i, record) in records.iter().enumerate() {
        assert_eq!(record.id, ds.id(i));
        let expected = match session.ledger().state(i) {
            LabelState::Instance(c) => Some((c, Provenance::Instance)),
            LabelState::Batch(c) => Some((c, Provenance::Batch)),
            LabelState::Unlabeled => None,
        };
        match expected {
            Some((c, p)) => assert_eq!((record.class_id, record.provenance), (c, p)),
            None => assert_eq!(record.provenance, Provenance::Predicted),
        }
    }
    assert!(export_accuracy(&records, &ds).unwrap() > 0.9);
}

#[test]
fn saved_sessions_replay_against_reingested_data() {
    let dir = tempfile::tempdir().unwrap();
    let ds = blobs(25, 4);
    let csv = dir.path().join("d.csv");
    write_csv(&ds, std::fs::File::create(&csv).unwrap()).unwrap();
    let ds = Arc::new(ingest(&csv, schema(), None, None).unwrap());
    let gt = ds.ground_truth().unwrap().to_vec();

    let mut session = Session::new(ds.clone(), SessionConfig::default());
    for i in (0..ds.len()).step_by(5) {
        session.label_instance(ds.id(i), gt[i]).unwrap();
    }
    session.retrain(9).unwrap();
    session
        .label_batch(&BatchLabelAction {
            selection: RangeSelection { class_id: ClassId(0), lo: 0.25, hi: 0.75 },
            target_class: ClassId(0),
            override_mismatch: false,
        })
        .unwrap();
    let save = dir.path().join("s.jsonl");
    session.save(std::fs::File::create(&save).unwrap(), Some(csv.to_str().unwrap())).unwrap();

    let again = Arc::new(ingest(&csv, schema(), None, None).unwrap());
    let replayed = Session::replay(again, BufReader::new(std::fs::File::open(&save).unwrap())).unwrap();
    assert_eq!(replayed.sequence(), session.sequence());
    assert_eq!(replayed.export().unwrap(), session.export().unwrap());

    let other = Arc::new(blobs(25, 5));
    assert!(Session::replay(other, BufReader::new(std::fs::File::open(&save).unwrap())).is_err());
}

#[test]
fn simulations_are_deterministic_under_seed() {
    let ds = blobs(60, 6);
    let config = SimulationConfig {
        strategy: Strategy::CvilBatch,
        iterations: 4,
        samples_per_iteration: 5,
        seed: 11,
        ..SimulationConfig::default()
    };
    let first = run_simulation(&ds, &config).unwrap();
    let second = run_simulation(&ds, &config).unwrap();
    assert_eq!(first.records, second.records);
    assert_eq!(first.batch_assignments, second.batch_assignments);
    let gt = ds.ground_truth().unwrap();
    for a in &first.batch_assignments {
        assert_eq!(gt[ds.index_of(&a.id).unwrap()], a.class);
    }
    assert_eq!(first.records.len(), first.records.last().unwrap().iteration + 1);
}
