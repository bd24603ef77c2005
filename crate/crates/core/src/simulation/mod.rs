//! Simulated labelers: class-centric instance labeling, class-centric
//! instance plus batch labeling, and a global uncertainty-sampling baseline.
//!
//! A run splits the dataset into a labeling pool and a held-out test set,
//! labels one random pool instance per class, and then alternates
//! select, label, retrain. After every retrain it records test accuracy and
//! the accuracy of the pool export (labels where present, predictions
//! elsewhere).

mod bench;
mod select;
pub mod synthetic;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, build_training_set, ClassifierError, ModelConfig, TrainingParams};
use crate::dataset::{export_accuracy, export_labels, ClassId, DatasetError, EmbeddingDataset, LabelLedger, LedgerError};
use crate::measures::{
    self, disagreement_with_neighbors, knn_all, min_margin, Measure, MeasureConfig, MeasureError, NeighborTable,
    Partitions, PropertyScores,
};

pub use bench::{bench_measures, BenchRow};
pub use select::{al_select, select_batch_prefix, select_instance_candidates};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("simulation needs ground truth")]
    MissingGroundTruth,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("batch label for instance {index} is {assigned} but ground truth is {truth}")]
    IncorrectBatchLabel { index: usize, assigned: ClassId, truth: ClassId },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SimulationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    CvilInstance,
    CvilBatch,
    AlBaseline,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::CvilInstance => "cvil_instance",
            Strategy::CvilBatch => "cvil_batch",
            Strategy::AlBaseline => "al_baseline",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cvil_instance" => Ok(Strategy::CvilInstance),
            "cvil_batch" => Ok(Strategy::CvilBatch),
            "al_baseline" => Ok(Strategy::AlBaseline),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub strategy: Strategy,
    /// Ranking measure for the class-centric strategies; the baseline always
    /// ranks by Min-Margin.
    pub measure: Measure,
    pub samples_per_iteration: usize,
    pub iterations: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Random ground-truth instance labels per class before the first retrain.
    pub init_per_class: usize,
    /// When the batch-prefix step runs; only `every_iteration` is implemented.
    pub batch_cadence: String,
    pub model: ModelConfig,
    pub training: TrainingParams,
    pub measures: MeasureConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::CvilInstance,
            measure: Measure::MinMargin,
            samples_per_iteration: 10,
            iterations: 30,
            seed: 0,
            train_fraction: 0.8,
            init_per_class: 1,
            batch_cadence: "every_iteration".to_owned(),
            model: ModelConfig::default(),
            training: TrainingParams::default(),
            measures: MeasureConfig::default(),
        }
    }
}

impl SimulationConfig {
    fn validate(&self) -> Result<()> {
        if self.samples_per_iteration == 0 {
            return Err(SimulationError::InvalidConfig("samples_per_iteration must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(SimulationError::InvalidConfig("train_fraction must lie in (0, 1)".into()));
        }
        if self.init_per_class == 0 {
            return Err(SimulationError::InvalidConfig("init_per_class must be positive".into()));
        }
        if self.batch_cadence != "every_iteration" {
            return Err(SimulationError::InvalidConfig(format!(
                "unsupported batch cadence {:?}",
                self.batch_cadence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub instance_labels: usize,
    pub batch_labels: usize,
    pub test_acc: f64,
    pub export_acc: f64,
}

/// One batch label given during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchAssignment {
    pub iteration: usize,
    pub id: String,
    pub class: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub config: SimulationConfig,
    pub pool_size: usize,
    pub test_size: usize,
    pub records: Vec<IterationRecord>,
    /// Batch labels checked against ground truth over the whole run.
    pub batch_labels_checked: usize,
    pub batch_assignments: Vec<BatchAssignment>,
    pub elapsed_ms: u64,
}

impl SimulationRun {
    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("a run always records its initialization")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "instance_labels", "batch_labels", "test_acc", "export_acc"])
            .map_err(std::io::Error::from)?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.instance_labels.to_string(),
                r.batch_labels.to_string(),
                format!("{:.6}", r.test_acc),
                format!("{:.6}", r.export_acc),
            ])
            .map_err(std::io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Config echo plus run metadata, for the JSON sidecar.
    pub fn write_config_json<W: Write>(&self, writer: W) -> Result<()> {
        let sidecar = serde_json::json!({
            "config": self.config,
            "pool_size": self.pool_size,
            "test_size": self.test_size,
            "batch_labels_checked": self.batch_labels_checked,
            "elapsed_ms": self.elapsed_ms,
        });
        serde_json::to_writer_pretty(writer, &sidecar)?;
        Ok(())
    }
}

/// Seeded pool/test split: `(pool indices, test indices)`, each ascending.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pool_len = ((n as f64 * train_fraction).round() as usize).min(n);
    let (pool, test) = order.split_at(pool_len);
    let (mut pool, mut test) = (pool.to_vec(), test.to_vec());
    pool.sort_unstable();
    test.sort_unstable();
    (pool, test)
}

fn accuracy(predicted: &[ClassId], truth: &[ClassId]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

struct Trained {
    pool_probs: measures::ProbabilityMatrix,
    record: IterationRecord,
}

struct Runner<'a> {
    config: &'a SimulationConfig,
    pool: EmbeddingDataset,
    test: EmbeddingDataset,
    truth: Vec<ClassId>,
    ledger: LabelLedger,
    neighbors: Option<Arc<NeighborTable>>,
    assignments: Vec<BatchAssignment>,
}

impl Runner<'_> {
    fn retrain(&mut self, iteration: usize) -> Result<Trained> {
        let seed = self.config.seed.wrapping_add(1 + iteration as u64);
        let set = build_training_set(&self.ledger, &self.config.training, seed ^ 0x5bd1_e995)?;
        let model_config = ModelConfig {
            seed,
            ..self.config.model.clone()
        };
        let model = classifier::train(&self.pool, &set, &model_config, None)?;
        let pool_probs = classifier::predict_proba(&model, &self.pool, None)?;
        let test_acc = if self.test.is_empty() {
            0.0
        } else {
            let test_probs = classifier::predict_proba(&model, &self.test, None)?;
            accuracy(&test_probs.predicted_classes(), self.test.ground_truth().expect("subset keeps truth"))
        };
        let records = export_labels(&self.pool, &self.ledger, Some(&pool_probs.predicted_classes()))?;
        let counts = self.ledger.counts();
        Ok(Trained {
            record: IterationRecord {
                iteration,
                instance_labels: counts.instance,
                batch_labels: counts.batch,
                test_acc,
                export_acc: export_accuracy(&records, &self.pool)?,
            },
            pool_probs,
        })
    }

    fn scores(&mut self, measure: Measure, probs: &measures::ProbabilityMatrix) -> Result<PropertyScores> {
        if measure != Measure::Disagreement {
            return Ok(measures::compute(measure, &self.pool, probs, &self.config.measures)?);
        }
        if self.neighbors.is_none() {
            self.neighbors = Some(Arc::new(knn_all(&self.pool, &self.config.measures.neighborhood)?));
        }
        Ok(disagreement_with_neighbors(self.neighbors.as_ref().expect("just set"), probs)?)
    }

    fn unlabeled_partitions(&self, scores: &PropertyScores) -> Partitions {
        Partitions::build(scores, self.pool.num_classes(), |i| self.ledger.is_unlabeled(i))
    }

    fn label_instances(&mut self, indices: &[usize]) -> Result<()> {
        for &i in indices {
            self.ledger.label_instance(i, self.truth[i])?;
        }
        Ok(())
    }

    /// One select-and-label step; returns how many batch labels were checked.
    fn step(&mut self, iteration: usize, probs: &measures::ProbabilityMatrix) -> Result<usize> {
        let quota = self.config.samples_per_iteration;
        match self.config.strategy {
            Strategy::AlBaseline => {
                let scores = min_margin(probs)?;
                let candidates: Vec<(usize, f64)> = (0..self.pool.len())
                    .filter(|&i| self.ledger.is_unlabeled(i))
                    .map(|i| (i, scores.values[i]))
                    .collect();
                self.label_instances(&al_select(&candidates, quota))?;
                Ok(0)
            }
            Strategy::CvilInstance | Strategy::CvilBatch => {
                let scores = self.scores(self.config.measure, probs)?;
                let picked = select_instance_candidates(&self.unlabeled_partitions(&scores), quota);
                self.label_instances(&picked)?;
                if self.config.strategy == Strategy::CvilInstance {
                    return Ok(0);
                }
                let partitions = self.unlabeled_partitions(&scores);
                let mut checked = 0;
                for c in 0..partitions.num_classes() {
                    let class = ClassId::from(c);
                    let prefix = select_batch_prefix(partitions.class(c), class, &self.truth);
                    for &i in &prefix {
                        if self.truth[i] != class {
                            return Err(SimulationError::IncorrectBatchLabel {
                                index: i,
                                assigned: class,
                                truth: self.truth[i],
                            });
                        }
                    }
                    checked += self.ledger.label_batch(&prefix, class)?;
                    self.assignments.extend(prefix.iter().map(|&i| BatchAssignment {
                        iteration,
                        id: self.pool.id(i).to_owned(),
                        class,
                    }));
                }
                Ok(checked)
            }
        }
    }
}

/// Runs one simulated labeling session; deterministic under `config.seed`.
pub fn run_simulation(dataset: &EmbeddingDataset, config: &SimulationConfig) -> Result<SimulationRun> {
    config.validate()?;
    if dataset.ground_truth().is_none() {
        return Err(SimulationError::MissingGroundTruth);
    }
    let start = Instant::now();
    let (pool_idx, test_idx) = split(dataset.len(), config.train_fraction, config.seed);
    let pool = dataset.subset(&pool_idx);
    let test = dataset.subset(&test_idx);
    let truth = pool.ground_truth().expect("checked above").to_vec();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1234_5678_9abc_def0);
    let mut ledger = LabelLedger::new(pool.len(), pool.num_classes());
    for c in 0..pool.num_classes() {
        let mut members: Vec<usize> = (0..pool.len()).filter(|&i| truth[i].index() == c).collect();
        members.shuffle(&mut rng);
        for &i in members.iter().take(config.init_per_class) {
            ledger.label_instance(i, truth[i])?;
        }
    }

    let mut runner = Runner {
        config,
        pool,
        test,
        truth,
        ledger,
        neighbors: None,
        assignments: Vec::new(),
    };
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut checked = 0;
    let mut current = runner.retrain(0)?;
    records.push(current.record);
    for iteration in 1..=config.iterations {
        if runner.ledger.counts().unlabeled == 0 {
            break;
        }
        checked += runner.step(iteration, &current.pool_probs)?;
        current = runner.retrain(iteration)?;
        records.push(current.record);
    }

    Ok(SimulationRun {
        config: config.clone(),
        pool_size: runner.pool.len(),
        test_size: runner.test.len(),
        records,
        batch_labels_checked: checked,
        batch_assignments: runner.assignments,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

/// Independent runs in parallel, results in input order.
pub fn run_many(dataset: &EmbeddingDataset, configs: &[SimulationConfig]) -> Vec<Result<SimulationRun>> {
    use rayon::prelude::*;
    configs.par_iter().map(|c| run_simulation(dataset, c)).collect()
}
