//! Taxonomic hierarchy, label paths and the ancestor arithmetic the metrics
//! and cascade code rely on.
//!
//! A [`Taxonomy`] is a rooted tree. The root is virtual and never appears in
//! a [`LabelPath`]; rank 1 nodes (orders in the bundled fixture) hang directly
//! below it. Class labels ("leaves") are the deepest-available nodes of the
//! dataset and may sit at different ranks. A label node can also have
//! children of its own: `Leuctra sp.` is a genus-level label while
//! `Leuctra nigra` is a species below it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Rank names of the bundled fixture, top-down.
pub const FIXTURE_RANKS: [&str; 4] = ["order", "family", "genus", "species"];

const ABSENT: &str = "-";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy table has no data rows")]
    EmptyTable,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: the top rank cell is absent")]
    MissingTopRank { line: usize },
    #[error("line {line}: {absent} is absent but deeper rank {present} is present")]
    RaggedRow {
        line: usize,
        absent: String,
        present: String,
    },
    #[error("line {line}: {rank} '{name}' already appears under a different parent")]
    ConflictingParent { line: usize, rank: String, name: String },
    #[error("line {line}: duplicate class label '{name}'")]
    DuplicateLabel { line: usize, name: String },
    #[error("node {0} is not part of this taxonomy")]
    ForeignNode(u32),
    #[error("invalid label path: {0}")]
    InvalidPath(String),
    #[error("unknown taxon '{name}' at rank {rank}")]
    UnknownTaxon { rank: usize, name: String },
    #[error("taxon name '{name}' is ambiguous at rank {rank}")]
    AmbiguousTaxon { rank: usize, name: String },
}

/// Index of a node in its taxonomy. Ids follow insertion order, which is the
/// canonical taxon order used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rank {
    /// 1-based level from the top.
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonNode {
    pub id: NodeId,
    pub name: String,
    pub rank: usize,
    /// `None` for rank 1 nodes, whose parent is the virtual root.
    pub parent: Option<NodeId>,
    children: Vec<NodeId>,
}

impl TaxonNode {
    pub fn children(&self) -> &[NodeId] {
        &self.children
    }
}

/// A class label of the dataset: the display name from the `taxa` column and
/// the deepest node it resolves to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLabel {
    pub name: String,
    pub node: NodeId,
    pub specimens: Option<u64>,
    pub images: Option<u64>,
}

/// Whether a correct but shallower prediction earns partial credit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefixMode {
    /// A correct prefix of depth d scores `H_i - d`.
    #[default]
    PartialCredit,
    /// Any prefix scores the maximal loss `H_i`.
    Strict,
}

impl fmt::Display for PrefixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrefixMode::PartialCredit => "partial-credit",
            PrefixMode::Strict => "strict",
        })
    }
}

impl std::str::FromStr for PrefixMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "partial-credit" | "partial" => Ok(PrefixMode::PartialCredit),
            "strict" => Ok(PrefixMode::Strict),
            other => Err(format!("unknown prefix mode '{other}'")),
        }
    }
}

/// Ordered taxa from rank 1 down to an observation's deepest available rank.
///
/// Only a [`Taxonomy`] hands these out, so consecutive entries are always
/// parent/child edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelPath(Vec<NodeId>);

impl LabelPath {
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn last(&self) -> NodeId {
        // non-empty by construction
        *self.0.last().expect("label paths are never empty")
    }

    /// Taxon at 1-based `rank`, or `None` when the path stops above it.
    pub fn ancestor_at_rank(&self, rank: usize) -> Option<NodeId> {
        if rank == 0 {
            return None;
        }
        self.0.get(rank - 1).copied()
    }

    /// Number of leading taxa shared with `other`.
    pub fn common_depth(&self, other: &LabelPath) -> usize {
        self.0.iter().zip(&other.0).take_while(|(a, b)| a == b).count()
    }

    pub fn is_strict_prefix_of(&self, other: &LabelPath) -> bool {
        self.depth() < other.depth() && self.common_depth(other) == self.depth()
    }

    /// First rank (1-based) at which the two paths disagree, counting a taxon
    /// present on one side only as a disagreement. `None` when equal.
    pub fn first_divergence(&self, other: &LabelPath) -> Option<usize> {
        if self == other {
            None
        } else {
            Some(self.common_depth(other) + 1)
        }
    }

    /// Truncate to the first `depth` taxa.
    pub fn truncated(&self, depth: usize) -> Option<LabelPath> {
        (depth >= 1 && depth <= self.depth()).then(|| LabelPath(self.0[..depth].to_vec()))
    }
}

/// Depth of the deepest common ancestor of two paths; 0 when they already
/// differ at rank 1 (the common ancestor is the virtual root).
pub fn dca_depth(a: &LabelPath, b: &LabelPath) -> usize {
    a.common_depth(b)
}

/// Context-sensitive loss of one prediction: the height of the deepest common
/// ancestor of prediction and truth, measured in levels below it along the
/// truth path.
///
/// An absent prediction scores the full truth depth. A prediction that runs
/// past a correct truth (truth `Leuctra sp.`, prediction `Leuctra nigra`)
/// scores 1 so that only exact matches are loss-free.
pub fn loss_height(pred: Option<&LabelPath>, truth: &LabelPath, mode: PrefixMode) -> usize {
    let depth = truth.depth();
    let Some(pred) = pred else {
        return depth;
    };
    if pred == truth {
        return 0;
    }
    if mode == PrefixMode::Strict && pred.is_strict_prefix_of(truth) {
        return depth;
    }
    (depth - dca_depth(pred, truth)).max(1)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TaxonomyStats {
    pub labels: usize,
    pub nodes_per_rank: BTreeMap<String, usize>,
    /// label count keyed by label depth
    pub label_depth_histogram: BTreeMap<usize, usize>,
    pub specimens: Option<u64>,
    pub images: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    ranks: Vec<Rank>,
    nodes: Vec<TaxonNode>,
    top: Vec<NodeId>,
    labels: Vec<ClassLabel>,
    child_index: HashMap<(Option<NodeId>, String), NodeId>,
    label_of_node: HashMap<NodeId, usize>,
    label_by_name: HashMap<String, usize>,
}

impl Taxonomy {
    pub fn ranks(&self) -> &[Rank] {
        &self.ranks
    }

    /// Total number of levels, `H`.
    pub fn levels(&self) -> usize {
        self.ranks.len()
    }

    pub fn rank_name(&self, rank: usize) -> &str {
        self.ranks
            .get(rank.wrapping_sub(1))
            .map(|r| r.name.as_str())
            .unwrap_or("?")
    }

    pub fn nodes(&self) -> &[TaxonNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&TaxonNode, TaxonomyError> {
        self.nodes.get(id.index()).ok_or(TaxonomyError::ForeignNode(id.0))
    }

    pub fn name(&self, id: NodeId) -> &str {
        self.nodes.get(id.index()).map_or("?", |n| n.name.as_str())
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    /// Rank 1 nodes, children of the virtual root.
    pub fn top_level(&self) -> &[NodeId] {
        &self.top
    }

    /// Children of `parent`, or the rank 1 nodes for the virtual root.
    pub fn children_of(&self, parent: Option<NodeId>) -> &[NodeId] {
        match parent {
            None => &self.top,
            Some(id) => self.nodes.get(id.index()).map_or(&[], |n| &n.children),
        }
    }

    pub fn nodes_at_rank(&self, rank: usize) -> impl Iterator<Item = &TaxonNode> {
        self.nodes.iter().filter(move |n| n.rank == rank)
    }

    /// Class labels in canonical (table row) order.
    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn label_index_of_node(&self, node: NodeId) -> Option<usize> {
        self.label_of_node.get(&node).copied()
    }

    pub fn is_label(&self, node: NodeId) -> bool {
        self.label_of_node.contains_key(&node)
    }

    pub fn label_by_name(&self, name: &str) -> Option<&ClassLabel> {
        self.label_by_name.get(name).map(|&i| &self.labels[i])
    }

    pub fn label_index_by_name(&self, name: &str) -> Option<usize> {
        self.label_by_name.get(name).copied()
    }

    pub fn child_named(&self, parent: Option<NodeId>, name: &str) -> Option<NodeId> {
        self.child_index.get(&(parent, name.to_string())).copied()
    }

    /// Node of the given rank and name when exactly one exists.
    pub fn unique_at_rank(&self, rank: usize, name: &str) -> Result<NodeId, TaxonomyError> {
        let mut found = self.nodes_at_rank(rank).filter(|n| n.name == name);
        match (found.next(), found.next()) {
            (Some(n), None) => Ok(n.id),
            (None, _) => Err(TaxonomyError::UnknownTaxon {
                rank,
                name: name.to_string(),
            }),
            (Some(_), Some(_)) => Err(TaxonomyError::AmbiguousTaxon {
                rank,
                name: name.to_string(),
            }),
        }
    }

    /// Validate a sequence of node ids as a label path.
    pub fn path(&self, nodes: Vec<NodeId>) -> Result<LabelPath, TaxonomyError> {
        if nodes.is_empty() {
            return Err(TaxonomyError::InvalidPath("empty path".into()));
        }
        let mut parent = None;
        for &id in &nodes {
            let node = self.node(id)?;
            if node.parent != parent {
                return Err(TaxonomyError::InvalidPath(format!(
                    "{} is not a child of {}",
                    node.name,
                    parent.map_or("the root", |p| self.name(p))
                )));
            }
            parent = Some(id);
        }
        Ok(LabelPath(nodes))
    }

    /// Resolve a top-down list of names into a path.
    pub fn path_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<LabelPath, TaxonomyError> {
        let mut parent = None;
        let mut nodes = Vec::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            let name = name.as_ref();
            let id = self
                .child_named(parent, name)
                .ok_or_else(|| TaxonomyError::UnknownTaxon {
                    rank: k + 1,
                    name: name.to_string(),
                })?;
            nodes.push(id);
            parent = Some(id);
        }
        self.path(nodes)
    }

    /// Full root-to-node path for any node, walking parent links upwards.
    pub fn expand_bottom_up(&self, node: NodeId) -> Result<LabelPath, TaxonomyError> {
        let mut chain = vec![node];
        let mut cur = self.node(node)?;
        while let Some(p) = cur.parent {
            chain.push(p);
            cur = self.node(p)?;
        }
        chain.reverse();
        Ok(LabelPath(chain))
    }

    pub fn label_path(&self, label_index: usize) -> Option<LabelPath> {
        let label = self.labels.get(label_index)?;
        self.expand_bottom_up(label.node).ok()
    }

    fn check_path(&self, p: &LabelPath) -> Result<(), TaxonomyError> {
        match p.nodes().iter().find(|id| !self.contains(**id)) {
            Some(id) => Err(TaxonomyError::ForeignNode(id.0)),
            None => Ok(()),
        }
    }

    pub fn dca_depth(&self, a: &LabelPath, b: &LabelPath) -> Result<usize, TaxonomyError> {
        self.check_path(a)?;
        self.check_path(b)?;
        Ok(dca_depth(a, b))
    }

    pub fn loss_height(
        &self,
        pred: Option<&LabelPath>,
        truth: &LabelPath,
        mode: PrefixMode,
    ) -> Result<usize, TaxonomyError> {
        self.check_path(truth)?;
        if let Some(p) = pred {
            self.check_path(p)?;
        }
        Ok(loss_height(pred, truth, mode))
    }

    pub fn stats(&self) -> TaxonomyStats {
        let mut nodes_per_rank = BTreeMap::new();
        for rank in &self.ranks {
            let count = self.nodes_at_rank(rank.index).count();
            nodes_per_rank.insert(rank.name.clone(), count);
        }
        let mut label_depth_histogram = BTreeMap::new();
        for label in &self.labels {
            *label_depth_histogram
                .entry(self.nodes[label.node.index()].rank)
                .or_insert(0) += 1;
        }
        let sum = |f: fn(&ClassLabel) -> Option<u64>| -> Option<u64> { self.labels.iter().map(f).sum::<Option<u64>>() };
        TaxonomyStats {
            labels: self.labels.len(),
            nodes_per_rank,
            label_depth_histogram,
            specimens: sum(|l| l.specimens),
            images: sum(|l| l.images),
        }
    }

    /// Serialize back into the taxonomy CSV schema. Only defined for
    /// four-rank taxonomies built with the fixture rank names.
    pub fn to_csv(&self) -> String {
        let with_counts = self.labels.iter().all(|l| l.specimens.is_some() && l.images.is_some());
        let mut out = String::from("taxa,species,genus,family,order");
        if with_counts {
            out.push_str(",specimens,images");
        }
        out.push('\n');
        for label in &self.labels {
            let path = self.expand_bottom_up(label.node).expect("labels reference own nodes");
            let mut cells = vec![csv_cell(&label.name)];
            for rank in (1..=self.levels()).rev() {
                cells.push(
                    path.ancestor_at_rank(rank)
                        .map_or_else(|| ABSENT.to_string(), |id| csv_cell(self.name(id))),
                );
            }
            if with_counts {
                cells.push(label.specimens.unwrap_or_default().to_string());
                cells.push(label.images.unwrap_or_default().to_string());
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical CSV serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Incremental construction of a [`Taxonomy`] from label lineages.
#[derive(Debug)]
pub struct TaxonomyBuilder {
    ranks: Vec<Rank>,
    nodes: Vec<TaxonNode>,
    top: Vec<NodeId>,
    labels: Vec<ClassLabel>,
    child_index: HashMap<(Option<NodeId>, String), NodeId>,
    rank_name_index: HashMap<(usize, String), NodeId>,
    label_of_node: HashMap<NodeId, usize>,
    label_by_name: HashMap<String, usize>,
    allow_homonyms: bool,
}

impl TaxonomyBuilder {
    pub fn new<S: AsRef<str>>(rank_names: &[S]) -> Self {
        let ranks = rank_names
            .iter()
            .enumerate()
            .map(|(i, n)| Rank {
                index: i + 1,
                name: n.as_ref().to_string(),
            })
            .collect();
        TaxonomyBuilder {
            ranks,
            nodes: Vec::new(),
            top: Vec::new(),
            labels: Vec::new(),
            child_index: HashMap::new(),
            rank_name_index: HashMap::new(),
            label_of_node: HashMap::new(),
            label_by_name: HashMap::new(),
            allow_homonyms: false,
        }
    }

    /// Permit the same name at one rank under different parents; such taxa
    /// become distinct nodes. Off by default, where it is a
    /// [`TaxonomyError::ConflictingParent`].
    pub fn allow_homonyms(mut self, allow: bool) -> Self {
        self.allow_homonyms = allow;
        self
    }

    /// Add a class label whose lineage is given top-down. `line` is only used
    /// for error messages.
    pub fn add_label<S: AsRef<str>>(
        &mut self,
        display: &str,
        lineage: &[S],
        counts: Option<(u64, u64)>,
        line: usize,
    ) -> Result<NodeId, TaxonomyError> {
        if lineage.is_empty() {
            return Err(TaxonomyError::MissingTopRank { line });
        }
        if lineage.len() > self.ranks.len() {
            return Err(TaxonomyError::Malformed {
                line,
                message: format!(
                    "lineage has {} levels but the taxonomy has {}",
                    lineage.len(),
                    self.ranks.len()
                ),
            });
        }
        if display.is_empty() {
            return Err(TaxonomyError::Malformed {
                line,
                message: "empty taxa name".into(),
            });
        }
        if self.label_by_name.contains_key(display) {
            return Err(TaxonomyError::DuplicateLabel {
                line,
                name: display.to_string(),
            });
        }
        let mut parent = None;
        for (k, name) in lineage.iter().enumerate() {
            let name = name.as_ref();
            let rank = k + 1;
            if name.is_empty() {
                return Err(TaxonomyError::Malformed {
                    line,
                    message: format!("empty {} name", self.ranks[k].name),
                });
            }
            let id = match self.child_index.get(&(parent, name.to_string())) {
                Some(&id) => id,
                None => {
                    if !self.allow_homonyms && self.rank_name_index.contains_key(&(rank, name.to_string())) {
                        return Err(TaxonomyError::ConflictingParent {
                            line,
                            rank: self.ranks[k].name.clone(),
                            name: name.to_string(),
                        });
                    }
                    self.push_node(name, rank, parent)
                }
            };
            parent = Some(id);
        }
        let node = parent.expect("lineage is non-empty");
        if self.label_of_node.contains_key(&node) {
            return Err(TaxonomyError::DuplicateLabel {
                line,
                name: display.to_string(),
            });
        }
        let idx = self.labels.len();
        self.labels.push(ClassLabel {
            name: display.to_string(),
            node,
            specimens: counts.map(|c| c.0),
            images: counts.map(|c| c.1),
        });
        self.label_of_node.insert(node, idx);
        self.label_by_name.insert(display.to_string(), idx);
        Ok(node)
    }

    fn push_node(&mut self, name: &str, rank: usize, parent: Option<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(TaxonNode {
            id,
            name: name.to_string(),
            rank,
            parent,
            children: Vec::new(),
        });
        match parent {
            Some(p) => self.nodes[p.index()].children.push(id),
            None => self.top.push(id),
        }
        self.child_index.insert((parent, name.to_string()), id);
        self.rank_name_index.entry((rank, name.to_string())).or_insert(id);
        id
    }

    pub fn build(self) -> Result<Taxonomy, TaxonomyError> {
        if self.labels.is_empty() {
            return Err(TaxonomyError::EmptyTable);
        }
        Ok(Taxonomy {
            ranks: self.ranks,
            nodes: self.nodes,
            top: self.top,
            labels: self.labels,
            child_index: self.child_index,
            label_of_node: self.label_of_node,
            label_by_name: self.label_by_name,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub allow_homonyms: bool,
}

/// Parse the taxonomy CSV (`taxa,species,genus,family,order` with optional
/// trailing `specimens,images`; `-` marks an absent rank).
pub fn parse_taxonomy<R: Read>(reader: R) -> Result<Taxonomy, TaxonomyError> {
    parse_taxonomy_with(reader, ParseOptions::default())
}

pub fn parse_taxonomy_str(text: &str) -> Result<Taxonomy, TaxonomyError> {
    parse_taxonomy(text.as_bytes())
}

pub fn parse_taxonomy_with<R: Read>(reader: R, options: ParseOptions) -> Result<Taxonomy, TaxonomyError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let malformed = |line: usize, e: &dyn fmt::Display| TaxonomyError::Malformed {
        line,
        message: e.to_string(),
    };
    let header = rdr.headers().map_err(|e| malformed(1, &e))?.clone();
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    let with_counts = match names.as_slice() {
        [a, b, c, d, e] if [a, b, c, d, e] == ["taxa", "species", "genus", "family", "order"] => false,
        [a, b, c, d, e, f, g]
            if [a, b, c, d, e, f, g] == ["taxa", "species", "genus", "family", "order", "specimens", "images"] =>
        {
            true
        }
        _ => {
            return Err(malformed(
                1,
                &"expected header taxa,species,genus,family,order[,specimens,images]",
            ))
        }
    };
    let width = if with_counts { 7 } else { 5 };

    let mut builder = TaxonomyBuilder::new(&FIXTURE_RANKS).allow_homonyms(options.allow_homonyms);
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(line, &e))?;
        if record.len() != width {
            return Err(malformed(
                line,
                &format!("expected {width} cells, found {}", record.len()),
            ));
        }
        // columns run deepest first; flip to top-down
        let cells: Vec<Option<&str>> = (1..=4)
            .rev()
            .map(|c| {
                let v = &record[c];
                (!v.is_empty() && v != ABSENT).then_some(v)
            })
            .collect();
        if cells[0].is_none() {
            return Err(TaxonomyError::MissingTopRank { line });
        }
        let present = cells.iter().take_while(|c| c.is_some()).count();
        if let Some(k) = cells[present..].iter().position(Option::is_some) {
            return Err(TaxonomyError::RaggedRow {
                line,
                absent: FIXTURE_RANKS[present].to_string(),
                present: FIXTURE_RANKS[present + k].to_string(),
            });
        }
        let lineage: Vec<&str> = cells[..present].iter().map(|c| c.unwrap()).collect();
        let counts = if with_counts {
            let parse = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| malformed(line, &format!("bad count '{s}': {e}")))
            };
            Some((parse(&record[5])?, parse(&record[6])?))
        } else {
            None
        };
        builder.add_label(&record[0], &lineage, counts, line)?;
    }
    builder.build()
}

/// The bundled taxonomy with 39 class labels, including per-label specimen
/// and image counts.
pub const FIXTURE_CSV: &str = include_str!("../fixtures/taxonomy.csv");

pub fn fixture() -> Taxonomy {
    parse_taxonomy_str(FIXTURE_CSV).expect("bundled fixture parses")
}
