use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{build_cascade_plan, node_key, CascadePlan, PlanEntry, TruthCensus};
use super::HierarchyError;
use crate::dataset::{DataSplit, Dataset, DatasetError, Specimen};
use crate::learners::{
    grid_search, train_softmax, ClassId, Features, GridPoint, GridSpec, LabeledSpecimen, LearnerError,
    PreprocessConfig, SoftmaxHyper, TrainedModel, ViewOutput,
};
use crate::taxonomy::{NodeId, Taxonomy};

/// Class id of the "stop here" class of a cascade node.
pub const SENTINEL: ClassId = ClassId::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Flat,
    PerLevel,
    Cascade,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Flat => "flat",
            Topology::PerLevel => "per-level",
            Topology::Cascade => "cascade",
        })
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(Topology::Flat),
            "per-level" | "level" => Ok(Topology::PerLevel),
            "cascade" | "per-node" => Ok(Topology::Cascade),
            other => Err(format!("unknown topology '{other}' (use flat, per-level or cascade)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerSpec {
    /// `grid: None` uses the topology's default grid
    Svm {
        grid: Option<GridSpec>,
    },
    Softmax {
        hyper: SoftmaxHyper,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learner: LearnerSpec,
    pub preprocess: PreprocessConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn svm(seed: u64) -> Self {
        TrainConfig {
            learner: LearnerSpec::Svm { grid: None },
            preprocess: PreprocessConfig::default(),
            seed,
        }
    }

    pub fn grid_for(&self, topology: Topology) -> GridSpec {
        match &self.learner {
            LearnerSpec::Svm { grid: Some(g) } => g.clone(),
            _ if topology == Topology::Cascade => GridSpec::cascade_default(),
            _ => GridSpec::flat_default(),
        }
    }
}

/// A node classifier, or a fixed answer when only one class has data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum NodeModel {
    Trained(TrainedModel),
    Constant { class: ClassId },
}

impl NodeModel {
    pub fn classes(&self) -> Vec<ClassId> {
        match self {
            NodeModel::Trained(m) => m.classes.clone(),
            NodeModel::Constant { class } => vec![*class],
        }
    }

    pub fn predict(&self, views: &Features) -> Result<Vec<ViewOutput>, LearnerError> {
        match self {
            NodeModel::Trained(m) => m.predict(views),
            NodeModel::Constant { class } => Ok((0..views.rows())
                .map(|_| ViewOutput {
                    label: *class,
                    scores: Some(vec![0.0]),
                    votes: Some(vec![0]),
                })
                .collect()),
        }
    }

    pub fn trained(&self) -> Option<&TrainedModel> {
        match self {
            NodeModel::Trained(m) => Some(m),
            NodeModel::Constant { .. } => None,
        }
    }
}

/// What happened while training one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub key: String,
    pub candidates: Vec<ClassId>,
    /// candidate classes without any training specimen
    pub dropped: Vec<ClassId>,
    pub train_specimens: usize,
    pub val_specimens: usize,
    pub selected: Option<GridPoint>,
    pub val_accuracy: Option<f64>,
    pub scored_on_training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyedModel {
    /// "flat", "rank-<r>", or a cascade node key ("root" or a node id)
    pub key: String,
    pub model: NodeModel,
    pub report: NodeReport,
}

/// Every trained piece of one topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedTopology {
    pub topology: Topology,
    pub dim: usize,
    pub models: Vec<KeyedModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<CascadePlan>,
    /// ranks covered by a per-level topology
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranks: Vec<usize>,
}

impl TrainedTopology {
    pub fn model(&self, key: &str) -> Option<&NodeModel> {
        self.models.iter().find(|m| m.key == key).map(|m| &m.model)
    }

    pub fn dropped_classes(&self) -> usize {
        self.models.iter().map(|m| m.report.dropped.len()).sum()
    }
}

pub fn class_of_node(node: NodeId) -> ClassId {
    node.0
}

/// Specimens of a split role with only their retained views, in split order.
pub fn split_specimens<'a>(
    dataset: &'a Dataset,
    split: &DataSplit,
    ids: &[String],
) -> Result<Vec<(&'a Specimen, Features)>, HierarchyError> {
    ids.iter()
        .map(|id| {
            let specimen = dataset
                .get(id)
                .ok_or_else(|| DatasetError::InvalidSplit(format!("unknown specimen '{id}'")))?;
            let mut views = Features::new(dataset.dim());
            match split.views.get(id) {
                Some(kept) => {
                    for image in kept {
                        let v = specimen.views.iter().find(|v| &v.image_id == image).ok_or_else(|| {
                            DatasetError::InvalidSplit(format!("specimen '{id}' has no image '{image}'"))
                        })?;
                        views.push_row(&v.values)?;
                    }
                }
                None => {
                    for v in &specimen.views {
                        views.push_row(&v.values)?;
                    }
                }
            }
            Ok((specimen, views))
        })
        .collect()
}

struct Pools<'a> {
    train: Vec<(&'a Specimen, Features)>,
    val: Vec<(&'a Specimen, Features)>,
}

impl<'a> Pools<'a> {
    fn new(dataset: &'a Dataset, split: &DataSplit) -> Result<Self, HierarchyError> {
        let train = split_specimens(dataset, split, &split.train)?;
        if train.is_empty() {
            return Err(HierarchyError::Dataset(DatasetError::InvalidSplit(
                "split has no training specimens".into(),
            )));
        }
        Ok(Pools {
            train,
            val: split_specimens(dataset, split, &split.val)?,
        })
    }

    fn labeled(
        set: &[(&Specimen, Features)],
        class: &(dyn Fn(&Specimen) -> Option<ClassId> + Sync),
    ) -> Vec<LabeledSpecimen> {
        set.iter()
            .filter_map(|(s, views)| {
                class(s).map(|label| LabeledSpecimen {
                    id: s.id.clone(),
                    label,
                    views: views.clone(),
                })
            })
            .collect()
    }
}

fn stack(specimens: &[LabeledSpecimen], dim: usize) -> (Features, Vec<ClassId>) {
    let mut x = Features::new(dim);
    let mut y = Vec::new();
    for s in specimens {
        for row in s.views.iter_rows() {
            x.push_row(row).expect("consistent dimension");
            y.push(s.label);
        }
    }
    (x, y)
}

fn train_one(
    key: String,
    candidates: Vec<ClassId>,
    pools: &Pools<'_>,
    class: &(dyn Fn(&Specimen) -> Option<ClassId> + Sync),
    config: &TrainConfig,
    grid: &GridSpec,
    dim: usize,
) -> Result<KeyedModel, HierarchyError> {
    let mut train = Pools::labeled(&pools.train, class);
    let mut val = Pools::labeled(&pools.val, class);
    let present: BTreeSet<ClassId> = train.iter().chain(&val).map(|s| s.label).collect();
    let dropped: Vec<ClassId> = candidates.iter().copied().filter(|c| !present.contains(c)).collect();
    if !dropped.is_empty() {
        log::warn!("classifier {key}: no training specimens for classes {dropped:?}; they cannot be predicted");
    }
    let mut report = NodeReport {
        key: key.clone(),
        candidates: candidates.clone(),
        dropped,
        train_specimens: train.len(),
        val_specimens: val.len(),
        selected: None,
        val_accuracy: None,
        scored_on_training: false,
    };
    if present.len() < 2 {
        let class = present.first().copied().unwrap_or(candidates[0]);
        log::warn!("classifier {key}: a single class has data; it always answers {class}");
        return Ok(KeyedModel {
            key,
            model: NodeModel::Constant { class },
            report,
        });
    }
    // the grid needs two classes among the training specimens
    let train_classes: BTreeSet<ClassId> = train.iter().map(|s| s.label).collect();
    if train_classes.len() < 2 {
        train.append(&mut val);
    }
    let model = match &config.learner {
        LearnerSpec::Svm { .. } => {
            let result = grid_search(grid, &train, &val, &config.preprocess, config.seed)?;
            report.selected = Some(result.best);
            report.val_accuracy = Some(result.accuracy);
            report.scored_on_training = result.scored_on_training;
            result.model
        }
        LearnerSpec::Softmax { hyper } => {
            let all: Vec<LabeledSpecimen> = train.into_iter().chain(val).collect();
            let (x, y) = stack(&all, dim);
            train_softmax(&x, &y, hyper, &config.preprocess)?
        }
    };
    Ok(KeyedModel {
        key,
        model: NodeModel::Trained(model),
        report,
    })
}

/// One classifier over all class labels; labels are their taxon ids.
pub fn train_flat(
    taxonomy: &Taxonomy,
    dataset: &Dataset,
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<TrainedTopology, HierarchyError> {
    let pools = Pools::new(dataset, split)?;
    let candidates: Vec<ClassId> = taxonomy.labels().iter().map(|l| class_of_node(l.node)).collect();
    let class = |s: &Specimen| Some(class_of_node(s.truth.last()));
    let model = train_one(
        "flat".into(),
        candidates,
        &pools,
        &class,
        config,
        &config.grid_for(Topology::Flat),
        dataset.dim(),
    )?;
    Ok(TrainedTopology {
        topology: Topology::Flat,
        dim: dataset.dim(),
        models: vec![model],
        plan: None,
        ranks: Vec::new(),
    })
}

/// Independent classifiers for each requested rank over the taxa at that
/// rank. Specimens whose truth stops above a rank are left out of it.
pub fn train_per_level(
    taxonomy: &Taxonomy,
    dataset: &Dataset,
    split: &DataSplit,
    config: &TrainConfig,
    ranks: &[usize],
) -> Result<TrainedTopology, HierarchyError> {
    let pools = Pools::new(dataset, split)?;
    let grid = config.grid_for(Topology::PerLevel);
    let mut ranks: Vec<usize> = ranks.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.is_empty() || ranks.iter().any(|&r| r == 0 || r > taxonomy.levels()) {
        return Err(HierarchyError::InvalidRanks(ranks));
    }
    let models = ranks
        .par_iter()
        .map(|&rank| {
            let candidates: Vec<ClassId> = taxonomy.nodes_at_rank(rank).map(|n| class_of_node(n.id)).collect();
            let class = move |s: &Specimen| s.truth.ancestor_at_rank(rank).map(class_of_node);
            train_one(
                format!("rank-{rank}"),
                candidates,
                &pools,
                &class,
                config,
                &grid,
                dataset.dim(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainedTopology {
        topology: Topology::PerLevel,
        dim: dataset.dim(),
        models,
        plan: None,
        ranks,
    })
}

fn entry_class(entry: &PlanEntry, specimen: &Specimen) -> Option<ClassId> {
    let nodes = specimen.truth.nodes();
    let depth = entry.rank - 1;
    if depth > 0 && nodes.get(depth - 1).copied() != entry.node {
        return None;
    }
    match nodes.get(depth) {
        Some(child) => Some(class_of_node(*child)),
        None if entry.sentinel => Some(SENTINEL),
        None => None,
    }
}

/// One classifier per plan entry, each trained only on specimens whose truth
/// passes through its node.
pub fn train_cascade(
    dataset: &Dataset,
    split: &DataSplit,
    config: &TrainConfig,
    plan: &CascadePlan,
) -> Result<TrainedTopology, HierarchyError> {
    let pools = Pools::new(dataset, split)?;
    let grid = config.grid_for(Topology::Cascade);
    let models = plan
        .entries
        .par_iter()
        .map(|entry| {
            let mut candidates: Vec<ClassId> = entry.children.iter().map(|c| class_of_node(*c)).collect();
            if entry.sentinel {
                candidates.push(SENTINEL);
            }
            let class = |s: &Specimen| entry_class(entry, s);
            train_one(
                node_key(entry.node),
                candidates,
                &pools,
                &class,
                config,
                &grid,
                dataset.dim(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainedTopology {
        topology: Topology::Cascade,
        dim: dataset.dim(),
        models,
        plan: Some(plan.clone()),
        ranks: Vec::new(),
    })
}

/// Train any topology; the cascade plan uses the dataset's truth census.
pub fn train_topology(
    topology: Topology,
    taxonomy: &Taxonomy,
    dataset: &Dataset,
    split: &DataSplit,
    config: &TrainConfig,
    ranks: &[usize],
) -> Result<TrainedTopology, HierarchyError> {
    match topology {
        Topology::Flat => train_flat(taxonomy, dataset, split, config),
        Topology::PerLevel => train_per_level(taxonomy, dataset, split, config, ranks),
        Topology::Cascade => {
            let census = TruthCensus::from_dataset(taxonomy, dataset);
            train_cascade(dataset, split, config, &build_cascade_plan(taxonomy, &census))
        }
    }
}
