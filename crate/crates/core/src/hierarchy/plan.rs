use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::taxonomy::{NodeId, Taxonomy};

/// Internal nodes at which some specimens' truth stops. Such nodes get the
/// sentinel class so their classifier can end a prediction there.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TruthCensus {
    pub shallow: BTreeSet<NodeId>,
}

impl TruthCensus {
    /// Every class label that also has children.
    pub fn from_taxonomy(taxonomy: &Taxonomy) -> Self {
        TruthCensus {
            shallow: taxonomy
                .labels()
                .iter()
                .map(|l| l.node)
                .filter(|&n| !taxonomy.children_of(Some(n)).is_empty())
                .collect(),
        }
    }

    /// Internal nodes that are the truth endpoint of at least one specimen.
    pub fn from_dataset(taxonomy: &Taxonomy, dataset: &Dataset) -> Self {
        TruthCensus {
            shallow: dataset
                .specimens()
                .iter()
                .map(|s| s.truth.last())
                .filter(|&n| !taxonomy.children_of(Some(n)).is_empty())
                .collect(),
        }
    }
}

/// A node that needs a classifier. `node == None` is the virtual root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub node: Option<NodeId>,
    /// rank of the child classes
    pub rank: usize,
    pub children: Vec<NodeId>,
    pub sentinel: bool,
}

impl PlanEntry {
    pub fn key(&self) -> String {
        node_key(self.node)
    }

    pub fn class_count(&self) -> usize {
        self.children.len() + usize::from(self.sentinel)
    }
}

pub fn node_key(node: Option<NodeId>) -> String {
    node.map_or_else(|| "root".to_string(), |n| n.0.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadePlan {
    /// in pre-order taxonomy traversal
    pub entries: Vec<PlanEntry>,
    pub census: TruthCensus,
}

/// What the descent does at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step<'a> {
    Stop,
    Descend(NodeId),
    Classify(&'a PlanEntry),
}

impl CascadePlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, node: Option<NodeId>) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.node == node)
    }

    /// Entry counts per child rank, index 0 = rank 1.
    pub fn per_rank(&self, levels: usize) -> Vec<usize> {
        let mut out = vec![0; levels];
        for e in &self.entries {
            out[e.rank - 1] += 1;
        }
        out
    }

    /// Nodes carrying the sentinel class.
    pub fn sentinel_nodes(&self) -> Vec<NodeId> {
        self.entries
            .iter()
            .filter(|e| e.sentinel)
            .filter_map(|e| e.node)
            .collect()
    }

    pub fn step(&self, taxonomy: &Taxonomy, node: Option<NodeId>) -> Step<'_> {
        if let Some(e) = self.entry(node) {
            return Step::Classify(e);
        }
        match taxonomy.children_of(node) {
            [only] => Step::Descend(*only),
            _ => Step::Stop,
        }
    }

    /// Nodes reached from the root by auto-descent alone, per node on a chain.
    pub fn auto_descended(&self, taxonomy: &Taxonomy) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<Option<NodeId>> = vec![None];
        while let Some(node) = stack.pop() {
            if self.entry(node).is_none() {
                if let [only] = taxonomy.children_of(node) {
                    out.push(*only);
                }
            }
            stack.extend(taxonomy.children_of(node).iter().rev().map(|c| Some(*c)));
        }
        out
    }
}

/// One entry per node with at least two effective children: its child taxa,
/// plus the sentinel when the census marks the node.
pub fn build_cascade_plan(taxonomy: &Taxonomy, census: &TruthCensus) -> CascadePlan {
    let mut entries = Vec::new();
    let mut stack: Vec<Option<NodeId>> = vec![None];
    while let Some(node) = stack.pop() {
        let children = taxonomy.children_of(node);
        let sentinel = node.is_some_and(|n| census.shallow.contains(&n)) && !children.is_empty();
        if children.len() + usize::from(sentinel) >= 2 {
            let rank = node.map_or(1, |n| taxonomy.node(n).map_or(1, |t| t.rank + 1));
            entries.push(PlanEntry {
                node,
                rank,
                children: children.to_vec(),
                sentinel,
            });
        }
        stack.extend(children.iter().rev().map(|c| Some(*c)));
    }
    CascadePlan {
        entries,
        census: census.clone(),
    }
}
