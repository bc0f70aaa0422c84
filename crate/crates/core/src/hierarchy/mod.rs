//! The three classifier topologies and specimen-level prediction.
//!
//! * flat: one classifier over all class labels, paths expanded bottom-up;
//! * per level: an independent classifier per rank, possibly incoherent;
//! * per parent node (cascade): a classifier at every node with two or more
//!   effective children, descended top-down.

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::learners::LearnerError;
use crate::metrics::MetricsError;
use crate::taxonomy::TaxonomyError;

pub mod aggregate;
pub mod io;
pub mod plan;
pub mod predict;
pub mod train;

pub use aggregate::{aggregate, Aggregate, AggregationRule};
pub use io::{evaluate_file, read_predictions, read_truths, write_predictions, ModelBundle, PredictionFile};
pub use plan::{build_cascade_plan, CascadePlan, PlanEntry, Step, TruthCensus};
pub use predict::{
    predict_from_scores, predict_specimen, predict_specimen_cascade, predict_specimen_flat, predict_split,
    SpecimenPrediction,
};
pub use train::{
    split_specimens, train_cascade, train_flat, train_per_level, train_topology, LearnerSpec, NodeModel, NodeReport,
    Topology, TrainConfig, TrainedTopology, SENTINEL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("specimen has no views")]
    NoViews,
    #[error("aggregation rule {0} needs per-class scores, which this learner does not produce")]
    RuleUnsupported(AggregationRule),
    #[error("ranks {0:?} are not valid for this taxonomy")]
    InvalidRanks(Vec<usize>),
    #[error("no trained model for '{0}'")]
    MissingModel(String),
    #[error("model predicted class {0}, which its node does not have")]
    UnknownClass(u32),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("model bundle: {0}")]
    Bundle(String),
    #[error("no truth for specimen '{0}'")]
    MissingTruth(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[cfg(test)]
mod tests;
