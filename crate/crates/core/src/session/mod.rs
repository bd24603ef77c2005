//! Interactive labeling state: ledger, model, scores and the action log.
//!
//! Retraining is split into [`Session::begin_retrain`], [`RetrainJob::run`]
//! and [`Session::finish_retrain`] so a host can train outside its lock while
//! readers keep seeing the last committed snapshot. Every mutation made while
//! a job is outstanding is rejected with [`SessionError::Busy`].

mod log;

use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, build_training_set, ClassifierError, ClassifierModel, ModelConfig, TrainingParams};
use crate::dataset::{export_labels, ClassId, DatasetError, EmbeddingDataset, ExportRecord, LabelLedger, LedgerError};
use crate::density::{self, ClassStats, DensityCurve, DensityError, RangeSelection, SelectionResult};
use crate::measures::{
    self, disagreement_with_neighbors, knn_all, Measure, MeasureConfig, MeasureError, NeighborTable, ProbabilityMatrix,
    PropertyScores,
};

pub use log::{dataset_fingerprint, ActionRecord, SessionHeader, SAVE_FORMAT, SAVE_VERSION};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("a retrain is in progress")]
    Busy,
    #[error("no trained model yet")]
    Untrained,
    #[error("cold-start sampling is only available before the first retrain")]
    AlreadyTrained,
    #[error("unknown instance id {0:?}")]
    UnknownId(String),
    #[error("class {class} is outside the {num_classes}-class schema")]
    UnknownClass { class: ClassId, num_classes: usize },
    #[error("selection is on class {selection_name:?} but the target class is {target_name:?}")]
    ClassMismatch {
        selection_class: ClassId,
        target_class: ClassId,
        selection_name: String,
        target_name: String,
    },
    #[error("requested {requested} samples from {available} instances")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("no retrain job is outstanding")]
    NoJob,
    #[error("save file: {0}")]
    Format(String),
    #[error("replay diverged at action {seq}: {reason}")]
    ReplayDivergence { seq: u64, reason: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SessionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub model: ModelConfig,
    pub training: TrainingParams,
    pub measures: MeasureConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLabelAction {
    pub selection: RangeSelection,
    pub target_class: ClassId,
    #[serde(default)]
    pub override_mismatch: bool,
}

/// A committed, replayable mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Action {
    LabelInstance {
        id: String,
        class: ClassId,
    },
    LabelBatch {
        action: BatchLabelAction,
        /// Ids that received the batch label, highest value first.
        applied: Vec<String>,
    },
    Retrain {
        seed: u64,
    },
    SetMeasure {
        measure: Measure,
    },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::LabelInstance { .. } => "label_instance",
            Action::LabelBatch { .. } => "label_batch",
            Action::Retrain { .. } => "retrain",
            Action::SetMeasure { .. } => "set_measure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seed: u64,
    pub instance_examples: usize,
    pub batch_examples: usize,
    pub c_min: usize,
    pub classes_without_instance_labels: Vec<ClassId>,
    pub epochs: usize,
    pub final_loss: f64,
    pub duration_ms: u64,
}

/// Everything a finished retrain produces.
#[derive(Debug)]
pub struct RetrainOutcome {
    model: ClassifierModel,
    probs: ProbabilityMatrix,
    scores: PropertyScores,
    neighbors: Option<Arc<NeighborTable>>,
    summary: TrainingSummary,
}

/// A retrain detached from the session; run it without holding the session.
pub struct RetrainJob {
    dataset: Arc<EmbeddingDataset>,
    ledger: LabelLedger,
    config: SessionConfig,
    measure: Measure,
    neighbors: Option<Arc<NeighborTable>>,
    seed: u64,
    cancel: Arc<AtomicBool>,
}

impl RetrainJob {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Flag polled between epochs.
    pub fn cancel_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.cancel)
    }

    pub fn run(self) -> Result<RetrainOutcome> {
        let start = Instant::now();
        let training_seed = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        let set = build_training_set(&self.ledger, &self.config.training, training_seed)?;
        let model_config = ModelConfig {
            seed: self.seed,
            ..self.config.model.clone()
        };
        let model = classifier::train(&self.dataset, &set, &model_config, Some(&self.cancel))?;
        let probs = classifier::predict_proba(&model, &self.dataset, None)?;
        let mut neighbors = self.neighbors;
        let scores = score(
            self.measure,
            &self.dataset,
            &probs,
            &self.config.measures,
            &mut neighbors,
        )?;
        let summary = TrainingSummary {
            seed: self.seed,
            instance_examples: set.instance_examples.len(),
            batch_examples: set.batch_examples.len(),
            c_min: set.c_min,
            classes_without_instance_labels: set.classes_without_instance_labels,
            epochs: model.epochs_run,
            final_loss: model.final_loss,
            duration_ms: start.elapsed().as_millis() as u64,
        };
        Ok(RetrainOutcome {
            model,
            probs,
            scores,
            neighbors,
            summary,
        })
    }
}

fn score(
    measure: Measure,
    dataset: &EmbeddingDataset,
    probs: &ProbabilityMatrix,
    config: &MeasureConfig,
    neighbors: &mut Option<Arc<NeighborTable>>,
) -> Result<PropertyScores> {
    if measure != Measure::Disagreement {
        return Ok(measures::compute(measure, dataset, probs, config)?);
    }
    let table = match neighbors {
        Some(t) if t.k() == config.neighborhood.k => Arc::clone(t),
        _ => {
            let t = Arc::new(knn_all(dataset, &config.neighborhood)?);
            *neighbors = Some(Arc::clone(&t));
            t
        }
    };
    Ok(disagreement_with_neighbors(&table, probs)?)
}

/// Labeling session over one dataset.
#[derive(Debug)]
pub struct Session {
    dataset: Arc<EmbeddingDataset>,
    config: SessionConfig,
    ledger: LabelLedger,
    model: Option<Arc<ClassifierModel>>,
    probs: Option<Arc<ProbabilityMatrix>>,
    scores: Option<Arc<PropertyScores>>,
    neighbors: Option<Arc<NeighborTable>>,
    measure: Measure,
    log: Vec<ActionRecord>,
    status: Status,
    last_training: Option<TrainingSummary>,
}

impl Session {
    pub fn new(dataset: Arc<EmbeddingDataset>, config: SessionConfig) -> Self {
        let ledger = LabelLedger::new(dataset.len(), dataset.num_classes());
        Self {
            dataset,
            config,
            ledger,
            model: None,
            probs: None,
            scores: None,
            neighbors: None,
            measure: Measure::default(),
            log: Vec::new(),
            status: Status::Idle,
            last_training: None,
        }
    }

    pub fn dataset(&self) -> &Arc<EmbeddingDataset> {
        &self.dataset
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn ledger(&self) -> &LabelLedger {
        &self.ledger
    }

    pub fn model(&self) -> Option<&ClassifierModel> {
        self.model.as_deref()
    }

    pub fn probabilities(&self) -> Option<&ProbabilityMatrix> {
        self.probs.as_deref()
    }

    pub fn scores(&self) -> Option<&PropertyScores> {
        self.scores.as_deref()
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_trained(&self) -> bool {
        self.model.is_some()
    }

    pub fn last_training(&self) -> Option<&TrainingSummary> {
        self.last_training.as_ref()
    }

    pub fn log(&self) -> &[ActionRecord] {
        &self.log
    }

    /// Number of committed actions.
    pub fn sequence(&self) -> u64 {
        self.log.len() as u64
    }

    fn ensure_idle(&self) -> Result<()> {
        match self.status {
            Status::Idle => Ok(()),
            Status::Training => Err(SessionError::Busy),
        }
    }

    fn check_class(&self, class: ClassId) -> Result<()> {
        if class.index() >= self.dataset.num_classes() {
            return Err(SessionError::UnknownClass {
                class,
                num_classes: self.dataset.num_classes(),
            });
        }
        Ok(())
    }

    fn class_name(&self, class: ClassId) -> String {
        self.dataset.schema().name(class).unwrap_or_default().to_owned()
    }

    fn commit(&mut self, action: Action) {
        let seq = self.log.len() as u64 + 1;
        self.log.push(ActionRecord { seq, action });
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.dataset.index_of(id).ok_or_else(|| SessionError::UnknownId(id.to_owned()))
    }

    pub fn label_instance(&mut self, id: &str, class: ClassId) -> Result<()> {
        self.ensure_idle()?;
        let index = self.index_of(id)?;
        self.check_class(class)?;
        self.ledger.label_instance(index, class)?;
        self.commit(Action::LabelInstance {
            id: id.to_owned(),
            class,
        });
        Ok(())
    }

    fn check_batch(&self, action: &BatchLabelAction) -> Result<()> {
        self.check_class(action.selection.class_id)?;
        self.check_class(action.target_class)?;
        if action.target_class != action.selection.class_id && !action.override_mismatch {
            return Err(SessionError::ClassMismatch {
                selection_class: action.selection.class_id,
                target_class: action.target_class,
                selection_name: self.class_name(action.selection.class_id),
                target_name: self.class_name(action.target_class),
            });
        }
        Ok(())
    }

    /// Batch-labels every unlabeled instance of the full selection; returns the count.
    pub fn label_batch(&mut self, action: &BatchLabelAction) -> Result<usize> {
        self.ensure_idle()?;
        let scores = self.scores.clone().ok_or(SessionError::Untrained)?;
        self.check_batch(action)?;
        let matches = density::selection_matches(&action.selection, &scores, &self.ledger)?;
        let count = self.ledger.label_batch(&matches, action.target_class)?;
        let applied = matches.iter().map(|&i| self.dataset.id(i).to_owned()).collect();
        self.commit(Action::LabelBatch {
            action: *action,
            applied,
        });
        Ok(count)
    }

    /// Uniform ids without replacement, for the first manual labels.
    pub fn cold_start_sample(&self, count: usize, seed: u64) -> Result<Vec<usize>> {
        if self.is_trained() {
            return Err(SessionError::AlreadyTrained);
        }
        let n = self.dataset.len();
        if count > n {
            return Err(SessionError::SampleTooLarge {
                requested: count,
                available: n,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(sample(&mut rng, n, count).into_vec())
    }

    /// Snapshots the training inputs and marks the session busy.
    pub fn begin_retrain(&mut self, seed: u64) -> Result<RetrainJob> {
        self.ensure_idle()?;
        self.status = Status::Training;
        Ok(RetrainJob {
            dataset: Arc::clone(&self.dataset),
            ledger: self.ledger.clone(),
            config: self.config.clone(),
            measure: self.measure,
            neighbors: self.neighbors.clone(),
            seed,
            cancel: Arc::new(AtomicBool::new(false)),
        })
    }

    /// Installs a finished job's results, or just returns to idle on failure.
    pub fn finish_retrain(&mut self, outcome: Result<RetrainOutcome>) -> Result<&TrainingSummary> {
        if self.status != Status::Training {
            return Err(SessionError::NoJob);
        }
        self.status = Status::Idle;
        let outcome = outcome?;
        if outcome.neighbors.is_some() {
            self.neighbors = outcome.neighbors;
        }
        self.model = Some(Arc::new(outcome.model));
        self.probs = Some(Arc::new(outcome.probs));
        self.scores = Some(Arc::new(outcome.scores));
        self.commit(Action::Retrain {
            seed: outcome.summary.seed,
        });
        Ok(self.last_training.insert(outcome.summary))
    }

    pub fn retrain(&mut self, seed: u64) -> Result<&TrainingSummary> {
        let job = self.begin_retrain(seed)?;
        let outcome = job.run();
        self.finish_retrain(outcome)
    }

    /// Switches the active measure. Eccentricity may be chosen before any
    /// training; its scores then appear with the first retrain.
    pub fn set_measure(&mut self, measure: Measure) -> Result<()> {
        self.ensure_idle()?;
        match &self.probs {
            Some(probs) => {
                let probs = Arc::clone(probs);
                let scores = score(measure, &self.dataset, &probs, &self.config.measures, &mut self.neighbors)?;
                self.scores = Some(Arc::new(scores));
            }
            None if measure.needs_model() => return Err(SessionError::Untrained),
            None => {}
        }
        self.measure = measure;
        self.commit(Action::SetMeasure { measure });
        Ok(())
    }

    pub fn density(&self, class: ClassId) -> Result<Option<DensityCurve>> {
        self.check_class(class)?;
        let scores = self.scores.as_deref().ok_or(SessionError::Untrained)?;
        let values: Vec<f64> = density::partition_members(class, scores, &self.ledger)?
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        Ok(density::kde_curve(class, &values))
    }

    pub fn preview(&self, selection: &RangeSelection, limit: usize) -> Result<SelectionResult> {
        let scores = self.scores.as_deref().ok_or(SessionError::Untrained)?;
        Ok(density::resolve_selection(selection, scores, &self.ledger, limit)?)
    }

    pub fn hover(&self, class: ClassId, value: f64, limit: usize) -> Result<SelectionResult> {
        let scores = self.scores.as_deref().ok_or(SessionError::Untrained)?;
        Ok(density::hover_preview(class, value, scores, &self.ledger, limit)?)
    }

    pub fn class_stats(&self) -> ClassStats {
        density::class_stats(&self.ledger, self.scores.as_deref()).expect("scores always cover the dataset")
    }

    /// Labels for every instance; unlabeled ones need a trained model.
    pub fn export(&self) -> Result<Vec<ExportRecord>> {
        let predicted = self.probs.as_ref().map(|p| p.predicted_classes());
        Ok(export_labels(&self.dataset, &self.ledger, predicted.as_deref())?)
    }

    /// Re-executes one logged action, checking it lands where the log says.
    fn apply(&mut self, record: &ActionRecord) -> Result<()> {
        let expected = self.sequence() + 1;
        if record.seq != expected {
            return Err(SessionError::ReplayDivergence {
                seq: record.seq,
                reason: format!("expected sequence number {expected}"),
            });
        }
        match &record.action {
            Action::LabelInstance { id, class } => self.label_instance(id, *class),
            Action::LabelBatch { action, applied } => {
                self.label_batch(action)?;
                match &self.log.last().expect("just committed").action {
                    Action::LabelBatch { applied: now, .. } if now == applied => Ok(()),
                    _ => Err(SessionError::ReplayDivergence {
                        seq: record.seq,
                        reason: "batch selection resolved to different instances".into(),
                    }),
                }
            }
            Action::Retrain { seed } => self.retrain(*seed).map(|_| ()),
            Action::SetMeasure { measure } => self.set_measure(*measure),
        }
    }
}
