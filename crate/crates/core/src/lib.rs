//! Hierarchical classification over taxonomic label paths.
//!
//! The crate covers three classifier topologies (flat, local per level and
//! local per parent node), multi-image specimen aggregation, the
//! hierarchical error measures CE / CSE / LCSE, reproducible data splits and
//! the base learners (RBF-kernel SVM trained with SMO, softmax regression).

pub mod config;
pub mod dataset;
pub mod hierarchy;
pub mod learners;
pub mod manifest;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod taxonomy;

pub use manifest::RunManifest;
pub use metrics::{MetricsReport, PredictionRecord, SplitAggregate};
pub use report::Report;
pub use taxonomy::{LabelPath, NodeId, PrefixMode, Taxonomy};
