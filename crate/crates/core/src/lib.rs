//! Class-centric interactive labeling engine.
//!
//! Instances are ranked by per-instance property measures (Min-Margin,
//! Eccentricity, Disagreement), grouped by predicted class, and shown as
//! per-class density curves. A human labels single instances or whole
//! value ranges of a class partition; a small weighted perceptron is
//! retrained in the loop. The [`simulation`] module replays the labeling
//! strategies against ground truth.

pub mod classifier;
pub mod dataset;
pub mod density;
pub mod measures;
pub mod session;
pub mod simulation;

pub use dataset::{ClassId, ClassSchema, EmbeddingDataset, LabelLedger, LabelState};
pub use measures::{Measure, ProbabilityMatrix, PropertyScores};
