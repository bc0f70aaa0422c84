use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, AggregationRule};
use super::plan::{node_key, CascadePlan, Step};
use super::train::{split_specimens, NodeModel, Topology, TrainedTopology, SENTINEL};
use super::HierarchyError;
use crate::dataset::{DataSplit, Dataset, ScoreTable};
use crate::learners::{Features, ViewOutput};
use crate::metrics::{ranks_coherent, PredictionRecord, RankPredictions};
use crate::taxonomy::{LabelPath, NodeId, Taxonomy};

/// Prediction for one specimen. `ranks[k]` is the taxon predicted at rank
/// `k + 1`; for flat and cascade topologies it is read off `path`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecimenPrediction {
    pub specimen_id: String,
    pub path: Option<LabelPath>,
    pub ranks: Vec<Option<NodeId>>,
    pub coherent: bool,
}

impl SpecimenPrediction {
    pub fn from_path(specimen_id: &str, path: Option<LabelPath>, levels: usize) -> Self {
        let ranks = (1..=levels)
            .map(|r| path.as_ref().and_then(|p| p.ancestor_at_rank(r)))
            .collect();
        SpecimenPrediction {
            specimen_id: specimen_id.to_string(),
            path,
            ranks,
            coherent: true,
        }
    }

    pub fn record(&self, truth: LabelPath) -> PredictionRecord {
        PredictionRecord::new(self.specimen_id.clone(), truth, self.path.clone())
    }

    pub fn rank_predictions(&self, truth: LabelPath) -> RankPredictions {
        RankPredictions {
            specimen_id: self.specimen_id.clone(),
            truth,
            ranks: self.ranks.clone(),
        }
    }
}

fn decide(model: &NodeModel, views: &Features, rule: AggregationRule) -> Result<u32, HierarchyError> {
    let outputs = model.predict(views)?;
    Ok(aggregate(&outputs, &model.classes(), rule)?.class)
}

fn node_of(taxonomy: &Taxonomy, class: u32) -> Result<NodeId, HierarchyError> {
    let node = NodeId(class);
    taxonomy.node(node)?;
    Ok(node)
}

/// Aggregate the flat model's view outputs to one class label and expand it
/// bottom-up to a full path.
pub fn predict_specimen_flat(
    taxonomy: &Taxonomy,
    model: &NodeModel,
    views: &Features,
    rule: AggregationRule,
) -> Result<LabelPath, HierarchyError> {
    let node = node_of(taxonomy, decide(model, views, rule)?)?;
    Ok(taxonomy.expand_bottom_up(node)?)
}

/// Top-down descent: classify at each plan node, auto-descend single-child
/// chains, stop at the sentinel or at a node without children.
pub fn predict_specimen_cascade(
    taxonomy: &Taxonomy,
    topology: &TrainedTopology,
    plan: &CascadePlan,
    views: &Features,
    rule: AggregationRule,
) -> Result<LabelPath, HierarchyError> {
    let mut visited = Vec::new();
    let mut node = None;
    loop {
        let next = match plan.step(taxonomy, node) {
            Step::Stop => break,
            Step::Descend(child) => child,
            Step::Classify(entry) => {
                let key = node_key(entry.node);
                let model = topology.model(&key).ok_or(HierarchyError::MissingModel(key))?;
                let class = decide(model, views, rule)?;
                if class == SENTINEL {
                    break;
                }
                let child = node_of(taxonomy, class)?;
                if !entry.children.contains(&child) {
                    return Err(HierarchyError::UnknownClass(class));
                }
                child
            }
        };
        visited.push(next);
        node = Some(next);
    }
    if visited.is_empty() {
        return Err(HierarchyError::MissingModel("root".into()));
    }
    Ok(taxonomy.path(visited)?)
}

/// Independent per-rank decisions; `coherent` tells whether they chain.
pub fn predict_specimen_per_level(
    taxonomy: &Taxonomy,
    topology: &TrainedTopology,
    views: &Features,
    rule: AggregationRule,
) -> Result<SpecimenPrediction, HierarchyError> {
    let mut ranks = vec![None; taxonomy.levels()];
    for &rank in &topology.ranks {
        let key = format!("rank-{rank}");
        let model = topology.model(&key).ok_or(HierarchyError::MissingModel(key))?;
        ranks[rank - 1] = Some(node_of(taxonomy, decide(model, views, rule)?)?);
    }
    Ok(SpecimenPrediction {
        specimen_id: String::new(),
        path: None,
        coherent: ranks_coherent(&ranks, taxonomy),
        ranks,
    })
}

pub fn predict_specimen(
    taxonomy: &Taxonomy,
    topology: &TrainedTopology,
    id: &str,
    views: &Features,
    rule: AggregationRule,
) -> Result<SpecimenPrediction, HierarchyError> {
    let levels = taxonomy.levels();
    match topology.topology {
        Topology::Flat => {
            let model = topology
                .model("flat")
                .ok_or_else(|| HierarchyError::MissingModel("flat".into()))?;
            let path = predict_specimen_flat(taxonomy, model, views, rule)?;
            Ok(SpecimenPrediction::from_path(id, Some(path), levels))
        }
        Topology::Cascade => {
            let plan = topology
                .plan
                .as_ref()
                .ok_or_else(|| HierarchyError::MissingModel("cascade plan".into()))?;
            let path = predict_specimen_cascade(taxonomy, topology, plan, views, rule)?;
            Ok(SpecimenPrediction::from_path(id, Some(path), levels))
        }
        Topology::PerLevel => {
            let mut p = predict_specimen_per_level(taxonomy, topology, views, rule)?;
            p.specimen_id = id.to_string();
            Ok(p)
        }
    }
}

/// Predictions for the test specimens of `split`, in split order.
pub fn predict_split(
    taxonomy: &Taxonomy,
    topology: &TrainedTopology,
    dataset: &Dataset,
    split: &DataSplit,
    rule: AggregationRule,
) -> Result<Vec<SpecimenPrediction>, HierarchyError> {
    if dataset.dim() != topology.dim {
        return Err(HierarchyError::Learner(
            crate::learners::LearnerError::DimensionMismatch {
                expected: topology.dim,
                found: dataset.dim(),
            },
        ));
    }
    let test = split_specimens(dataset, split, &split.test)?;
    test.par_iter()
        .map(|(s, views)| predict_specimen(taxonomy, topology, &s.id, views, rule))
        .collect()
}

/// Flat predictions from precomputed per-view class-label scores (e.g. the
/// outputs of an external network), columns in taxonomy label order.
pub fn predict_from_scores(
    taxonomy: &Taxonomy,
    table: &ScoreTable,
    rule: AggregationRule,
) -> Result<Vec<SpecimenPrediction>, HierarchyError> {
    let classes: Vec<u32> = taxonomy.labels().iter().map(|l| l.node.0).collect();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by_key(|&i| classes[i]);
    let sorted: Vec<u32> = order.iter().map(|&i| classes[i]).collect();
    table
        .specimens
        .iter()
        .map(|s| {
            let outputs: Vec<ViewOutput> = s
                .views
                .iter()
                .map(|v| {
                    let scores: Vec<f64> = order.iter().map(|&i| v.values[i]).collect();
                    let mut best = 0;
                    for (k, x) in scores.iter().enumerate() {
                        if *x > scores[best] {
                            best = k;
                        }
                    }
                    ViewOutput {
                        label: sorted[best],
                        scores: Some(scores),
                        votes: None,
                    }
                })
                .collect();
            let class = aggregate(&outputs, &sorted, rule)?.class;
            let path = taxonomy.expand_bottom_up(NodeId(class))?;
            Ok(SpecimenPrediction::from_path(&s.id, Some(path), taxonomy.levels()))
        })
        .collect()
}
