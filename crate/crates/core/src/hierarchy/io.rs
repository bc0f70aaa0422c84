//! Model bundles and prediction files.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::predict::SpecimenPrediction;
use super::train::{NodeModel, TrainConfig, TrainedTopology};
use super::HierarchyError;
use crate::metrics::{evaluate, evaluate_per_rank, ranks_coherent, MetricsReport, PredictionRecord, RankPredictions};
use crate::taxonomy::{LabelPath, NodeId, PrefixMode, Taxonomy};

pub const BUNDLE_FORMAT: &str = "hierclass-model";
pub const BUNDLE_VERSION: u32 = 1;

/// Trained topology plus what is needed to check it is used with the right
/// taxonomy. Float arrays inside are base64 little-endian `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub taxonomy_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    pub config: TrainConfig,
    pub trained: TrainedTopology,
}

impl ModelBundle {
    pub fn new(taxonomy: &Taxonomy, config: TrainConfig, trained: TrainedTopology) -> Self {
        ModelBundle {
            format: BUNDLE_FORMAT.to_string(),
            version: BUNDLE_VERSION,
            taxonomy_digest: taxonomy.digest(),
            manifest: None,
            config,
            trained,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(bytes: &[u8]) -> Result<ModelBundle, HierarchyError> {
        let bundle: ModelBundle = serde_json::from_slice(bytes).map_err(|e| HierarchyError::Bundle(e.to_string()))?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(HierarchyError::Bundle(format!(
                "not a model bundle (format '{}')",
                bundle.format
            )));
        }
        if bundle.version != BUNDLE_VERSION {
            return Err(HierarchyError::Bundle(format!(
                "unsupported bundle version {} (expected {BUNDLE_VERSION})",
                bundle.version
            )));
        }
        for keyed in &bundle.trained.models {
            if let NodeModel::Trained(m) = &keyed.model {
                m.check()
                    .map_err(|e| HierarchyError::Bundle(format!("model '{}': {e}", keyed.key)))?;
                if m.input_dim() != bundle.trained.dim {
                    return Err(HierarchyError::Bundle(format!(
                        "model '{}' expects {} features, bundle {}",
                        keyed.key,
                        m.input_dim(),
                        bundle.trained.dim
                    )));
                }
            }
        }
        Ok(bundle)
    }

    pub fn check_taxonomy(&self, taxonomy: &Taxonomy) -> Result<(), HierarchyError> {
        if self.taxonomy_digest != taxonomy.digest() {
            return Err(HierarchyError::Bundle(
                "bundle was trained on a different taxonomy".into(),
            ));
        }
        if self.trained.ranks.iter().any(|&r| r == 0 || r > taxonomy.levels()) {
            return Err(HierarchyError::InvalidRanks(self.trained.ranks.clone()));
        }
        Ok(())
    }
}

/// Rows of a prediction (or truth) file plus its `# key=value` header lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionFile {
    pub meta: BTreeMap<String, String>,
    pub rows: Vec<SpecimenPrediction>,
}

impl PredictionFile {
    pub fn manifest(&self) -> Option<&str> {
        self.meta.get("manifest").map(String::as_str)
    }

    /// Whether the rows are independent per-rank decisions.
    pub fn per_rank(&self) -> bool {
        self.meta.get("topology").is_some_and(|t| t == "per-level")
    }
}

/// `specimen_id,rank1..rankN` with taxon names and empty cells for absent
/// ranks. `meta` entries become leading `# key=value` lines.
pub fn write_predictions(taxonomy: &Taxonomy, rows: &[SpecimenPrediction], meta: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["specimen_id".to_string()];
    header.extend((1..=taxonomy.levels()).map(|r| format!("rank{r}")));
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        let mut record = vec![row.specimen_id.clone()];
        record.extend((0..taxonomy.levels()).map(|k| {
            row.ranks
                .get(k)
                .copied()
                .flatten()
                .map_or(String::new(), |n| taxonomy.name(n).to_string())
        }));
        w.write_record(&record).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
    out
}

fn format_error(line: usize, message: impl Into<String>) -> HierarchyError {
    HierarchyError::Format {
        line,
        message: message.into(),
    }
}

fn resolve(taxonomy: &Taxonomy, parent: Option<NodeId>, rank: usize, name: &str) -> Result<NodeId, String> {
    if let Some(n) = parent.and_then(|p| taxonomy.child_named(Some(p), name)) {
        return Ok(n);
    }
    taxonomy.unique_at_rank(rank, name).map_err(|e| e.to_string())
}

pub fn read_predictions<R: Read>(mut reader: R, taxonomy: &Taxonomy) -> Result<PredictionFile, HierarchyError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| format_error(0, e.to_string()))?;
    let mut meta = BTreeMap::new();
    for line in text.lines().filter(|l| l.starts_with('#')) {
        if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| format_error(1, e.to_string()))?.clone();
    let levels = taxonomy.levels();
    if header.len() != levels + 1 || !header[0].eq_ignore_ascii_case("specimen_id") {
        return Err(format_error(
            1,
            format!("expected header specimen_id plus {levels} rank columns"),
        ));
    }
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| format_error(i + 2, e.to_string()))?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        if record.len() != levels + 1 {
            return Err(format_error(
                line,
                format!("expected {} fields, found {}", levels + 1, record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(format_error(line, "empty specimen id"));
        }
        if seen.insert(id.clone(), line).is_some() {
            return Err(format_error(line, format!("specimen '{id}' listed twice")));
        }
        let mut ranks = Vec::with_capacity(levels);
        let mut parent = None;
        for rank in 1..=levels {
            let cell = &record[rank];
            if cell.is_empty() {
                ranks.push(None);
                parent = None;
                continue;
            }
            let node = resolve(taxonomy, parent, rank, cell).map_err(|m| format_error(line, m))?;
            ranks.push(Some(node));
            parent = Some(node);
        }
        let coherent = ranks_coherent(&ranks, taxonomy);
        let present: Vec<NodeId> = ranks.iter().map_while(|r| *r).collect();
        let path = if coherent && !present.is_empty() {
            Some(taxonomy.path(present)?)
        } else {
            None
        };
        rows.push(SpecimenPrediction {
            specimen_id: id,
            path,
            ranks,
            coherent,
        });
    }
    Ok(PredictionFile { meta, rows })
}

/// Truth paths from a file in prediction shape. Every row must be a
/// coherent, non-empty path.
pub fn read_truths<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<HashMap<String, LabelPath>, HierarchyError> {
    let file = read_predictions(reader, taxonomy)?;
    file.rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| match row.path {
            Some(p) => Ok((row.specimen_id, p)),
            None => Err(format_error(
                i + 2,
                format!("truth for '{}' is not a taxon path", row.specimen_id),
            )),
        })
        .collect()
}

/// Score predictions against truths. Per-rank files, or any file with an
/// incoherent row, get per-rank metrics only.
pub fn evaluate_file(
    file: &PredictionFile,
    truths: &HashMap<String, LabelPath>,
    taxonomy: &Taxonomy,
    mode: PrefixMode,
) -> Result<MetricsReport, HierarchyError> {
    let truth_of = |id: &str| {
        truths
            .get(id)
            .cloned()
            .ok_or_else(|| HierarchyError::MissingTruth(id.to_string()))
    };
    if file.per_rank() || file.rows.iter().any(|r| !r.coherent) {
        let rows: Vec<RankPredictions> = file
            .rows
            .iter()
            .map(|r| Ok(r.rank_predictions(truth_of(&r.specimen_id)?)))
            .collect::<Result<_, HierarchyError>>()?;
        Ok(evaluate_per_rank(&rows, taxonomy, mode)?)
    } else {
        let records: Vec<PredictionRecord> = file
            .rows
            .iter()
            .map(|r| Ok(r.record(truth_of(&r.specimen_id)?)))
            .collect::<Result<_, HierarchyError>>()?;
        Ok(evaluate(&records, taxonomy, mode)?)
    }
}
