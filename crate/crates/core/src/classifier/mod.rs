//! Two-hidden-layer perceptron trained on instance labels plus subsampled,
//! down-weighted batch labels.

mod checkpoint;
mod mlp;
mod training_set;

use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, EmbeddingDataset};
use crate::measures::ProbabilityMatrix;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use mlp::{Gradient, Mlp};
pub use training_set::{build_training_set, Example, TrainingParams, TrainingSet};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("no instance labels yet; the model stays untrained")]
    Untrained,
    #[error("classes {0:?} carry labels but no instance label")]
    MissingInstanceLabels(Vec<ClassId>),
    #[error("class {class} is outside the {num_classes}-class schema")]
    InvalidClass { class: ClassId, num_classes: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("model expects {expected} input dimensions, dataset has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("instance index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("training cancelled")]
    Cancelled,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ClassifierError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_sizes: [usize; 2],
    pub seed: u64,
    pub epochs: usize,
    /// Lower bound on optimizer updates; small training sets get extra epochs.
    pub min_updates: usize,
    pub learning_rate: f64,
    pub minibatch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: [50, 20],
            seed: 0,
            epochs: 40,
            min_updates: 0,
            learning_rate: 1e-3,
            minibatch_size: 32,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.minibatch_size == 0 || self.hidden_sizes.contains(&0) {
            return Err(ClassifierError::InvalidConfig(
                "epochs, minibatch_size and hidden sizes must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ClassifierError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A trained network plus the metadata of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub(crate) net: Mlp,
    pub(crate) config: ModelConfig,
    pub epochs_run: usize,
    pub final_loss: f64,
}

impl ClassifierModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }
}

/// `weight * -ln p[true_class]`, with `p` floored at `1e-12`.
pub fn weighted_loss(probs_row: &[f64], true_class: ClassId, weight: f64) -> Result<f64> {
    let p = probs_row.get(true_class.index()).ok_or(ClassifierError::InvalidClass {
        class: true_class,
        num_classes: probs_row.len(),
    })?;
    Ok(weight * -p.max(mlp::PROB_FLOOR).ln())
}

fn gather_rows(dataset: &EmbeddingDataset, indices: impl Iterator<Item = usize>, out: &mut Vec<f64>) {
    out.clear();
    for i in indices {
        out.extend(dataset.row(i).iter().map(|&v| f64::from(v)));
    }
}

/// Trains from scratch with minibatch Adam. `cancel` is polled between epochs.
pub fn train(
    dataset: &EmbeddingDataset,
    training_set: &TrainingSet,
    config: &ModelConfig,
    cancel: Option<&AtomicBool>,
) -> Result<ClassifierModel> {
    config.validate()?;
    let examples = training_set.examples();
    if examples.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let k = dataset.num_classes();
    for ex in &examples {
        if ex.index >= dataset.len() {
            return Err(ClassifierError::IndexOutOfRange(ex.index));
        }
        if ex.class.index() >= k {
            return Err(ClassifierError::InvalidClass {
                class: ex.class,
                num_classes: k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sizes = [dataset.dim(), config.hidden_sizes[0], config.hidden_sizes[1], k];
    let mut net = Mlp::new(&sizes, &mut rng);
    let mut params = net.parameters();
    let mut adam = mlp::Adam::new(params.len(), config.learning_rate);

    let batches_per_epoch = examples.len().div_ceil(config.minibatch_size);
    let epochs = config
        .epochs
        .max(config.min_updates.div_ceil(batches_per_epoch));

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut x = Vec::new();
    let mut final_loss = 0.0;
    for epoch in 0..epochs {
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(ClassifierError::Cancelled);
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.minibatch_size) {
            gather_rows(dataset, batch.iter().map(|&e| examples[e].index), &mut x);
            let targets: Vec<usize> = batch.iter().map(|&e| examples[e].class.index()).collect();
            let weights: Vec<f64> = batch.iter().map(|&e| examples[e].weight).collect();
            let (loss, mut grad) = net.loss_and_gradient(&x, batch.len(), &targets, &weights);
            epoch_loss += loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.update(&mut params, &grad);
            net.set_parameters(&params);
        }
        final_loss = epoch_loss / examples.len() as f64;
        if epoch + 1 == epochs {
            break;
        }
    }

    Ok(ClassifierModel {
        net,
        config: config.clone(),
        epochs_run: epochs,
        final_loss,
    })
}

const PREDICT_CHUNK: usize = 1024;

/// Softmax outputs for the given instances (all instances when `None`).
pub fn predict_proba(
    model: &ClassifierModel,
    dataset: &EmbeddingDataset,
    indices: Option<&[usize]>,
) -> Result<ProbabilityMatrix> {
    use rayon::prelude::*;

    if dataset.dim() != model.input_dim() {
        return Err(ClassifierError::DimensionMismatch {
            expected: model.input_dim(),
            found: dataset.dim(),
        });
    }
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => {
            if let Some(&bad) = ix.iter().find(|&&i| i >= dataset.len()) {
                return Err(ClassifierError::IndexOutOfRange(bad));
            }
            ix
        }
        None => {
            all = (0..dataset.len()).collect();
            &all
        }
    };
    let k = model.num_classes();
    let chunks: Vec<Vec<f64>> = indices
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let mut x = Vec::new();
            gather_rows(dataset, chunk.iter().copied(), &mut x);
            model.net.predict(&x, chunk.len())
        })
        .collect();
    let data: Vec<f64> = chunks.into_iter().flatten().collect();
    ProbabilityMatrix::new(indices.len(), k, data)
        .map_err(|e| ClassifierError::Checkpoint(format!("softmax produced an invalid row: {e}")))
}
