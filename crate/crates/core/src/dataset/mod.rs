//! Specimens with multi-image views: ingestion of feature and score files,
//! view subsampling, split protocols and synthetic benchmark data.

use std::collections::HashMap;
use std::io::Read;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::SeededRng;
use crate::taxonomy::{LabelPath, Taxonomy};

mod split;
mod synthetic;

pub use split::{
    apportion, default_comparison_counts, make_comparison_splits, make_ml_splits, make_splits, DataSplit, MlMode,
    Scheme, SplitSpec,
};
pub use synthetic::{generate_synthetic, leaf_means, SyntheticSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("input has no data rows")]
    EmptyInput,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown class label '{name}'")]
    UnknownLeaf { line: usize, name: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: image '{image}' of specimen '{specimen}' appears twice")]
    DuplicateImage {
        line: usize,
        specimen: String,
        image: String,
    },
    #[error("line {line}: specimen '{specimen}' has conflicting labels")]
    ConflictingLabel { line: usize, specimen: String },
    #[error("taxon '{taxon}' needs {needed} specimens but has {available}")]
    InsufficientSpecimens {
        taxon: String,
        needed: usize,
        available: usize,
    },
    #[error("need at least {needed} specimens, found {found}")]
    TooFewSpecimens { needed: usize, found: usize },
    #[error("invalid split specification: {0}")]
    InvalidSpec(String),
    #[error("invalid split file: {0}")]
    InvalidSplit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Specimen {
    pub id: String,
    /// index into [`Taxonomy::labels`]
    pub label: usize,
    pub truth: LabelPath,
    pub views: Vec<View>,
}

/// Feature-vector specimens sharing one dimensionality. Specimens keep the
/// order of first appearance in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    specimens: Vec<Specimen>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(dim: usize, specimens: Vec<Specimen>) -> Result<Dataset, DatasetError> {
        let mut index = HashMap::with_capacity(specimens.len());
        for (i, s) in specimens.iter().enumerate() {
            if s.views.is_empty() {
                return Err(DatasetError::InvalidSpec(format!("specimen '{}' has no views", s.id)));
            }
            if let Some(v) = s.views.iter().find(|v| v.values.len() != dim) {
                return Err(DatasetError::DimensionMismatch {
                    line: 0,
                    expected: dim,
                    found: v.values.len(),
                });
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(DatasetError::InvalidSpec(format!("duplicate specimen '{}'", s.id)));
            }
        }
        Ok(Dataset { dim, specimens, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn specimens(&self) -> &[Specimen] {
        &self.specimens
    }

    pub fn len(&self) -> usize {
        self.specimens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specimens.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Specimen> {
        self.index.get(id).map(|&i| &self.specimens[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn image_count(&self) -> usize {
        self.specimens.iter().map(|s| s.views.len()).sum()
    }

    /// Render back into the feature CSV schema.
    pub fn to_feature_csv(&self, taxonomy: &Taxonomy) -> String {
        let mut out = String::from("specimen_id,image_id,label_leaf");
        for k in 1..=self.dim {
            out.push_str(&format!(",f{k}"));
        }
        out.push('\n');
        for s in &self.specimens {
            let label = &taxonomy.labels()[s.label].name;
            for v in &s.views {
                out.push_str(&format!("{},{},{}", s.id, v.image_id, label));
                for x in &v.values {
                    out.push_str(&format!(",{x}"));
                }
                out.push('\n');
            }
        }
        out
    }

    /// SHA-256 over ids, labels and the exact bits of every value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for s in &self.specimens {
            h.update(s.id.as_bytes());
            h.update([0]);
            h.update((s.label as u64).to_le_bytes());
            for v in &s.views {
                h.update(v.image_id.as_bytes());
                h.update([0]);
                for x in &v.values {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

fn malformed(line: usize, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Malformed {
        line,
        message: e.to_string(),
    }
}

fn parse_values(record: &csv::StringRecord, from: usize, line: usize) -> Result<Vec<f64>, DatasetError> {
    record
        .iter()
        .skip(from)
        .map(|cell| {
            let v: f64 = cell
                .parse()
                .map_err(|_| malformed(line, format!("not a number: '{cell}'")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(malformed(line, format!("non-finite value '{cell}'")))
            }
        })
        .collect()
}

struct Grouped {
    order: Vec<String>,
    views: HashMap<String, Vec<View>>,
    labels: HashMap<String, Option<usize>>,
}

impl Grouped {
    fn new() -> Self {
        Grouped {
            order: Vec::new(),
            views: HashMap::new(),
            labels: HashMap::new(),
        }
    }

    fn push(&mut self, line: usize, specimen: &str, label: Option<usize>, view: View) -> Result<(), DatasetError> {
        match self.labels.get(specimen) {
            Some(existing) if *existing != label => {
                return Err(DatasetError::ConflictingLabel {
                    line,
                    specimen: specimen.to_string(),
                })
            }
            Some(_) => {}
            None => {
                self.order.push(specimen.to_string());
                self.labels.insert(specimen.to_string(), label);
            }
        }
        let views = self.views.entry(specimen.to_string()).or_default();
        if views.iter().any(|v| v.image_id == view.image_id) {
            return Err(DatasetError::DuplicateImage {
                line,
                specimen: specimen.to_string(),
                image: view.image_id,
            });
        }
        views.push(view);
        Ok(())
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
}

/// Ingest `specimen_id,image_id,label_leaf,f1..fD`. Labels are class label
/// names (the `taxa` column of the taxonomy); truth paths are expanded
/// bottom-up from them.
pub fn ingest_features<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<Dataset, DatasetError> {
    let mut rdr = csv_reader(reader);
    let header = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(DatasetError::EmptyInput),
        Err(e) => return Err(malformed(1, e)),
    };
    if header.len() < 4 {
        return Err(malformed(1, "expected header specimen_id,image_id,label_leaf,f1..fD"));
    }
    let dim = header.len() - 3;
    let mut grouped = Grouped::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| malformed(i + 2, e))?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        if record.len() != dim + 3 {
            return Err(DatasetError::DimensionMismatch {
                line,
                expected: dim,
                found: record.len().saturating_sub(3),
            });
        }
        let label = taxonomy
            .label_index_by_name(&record[2])
            .ok_or_else(|| DatasetError::UnknownLeaf {
                line,
                name: record[2].to_string(),
            })?;
        if record[0].is_empty() || record[1].is_empty() {
            return Err(malformed(line, "empty specimen or image id"));
        }
        let view = View {
            image_id: record[1].to_string(),
            values: parse_values(&record, 3, line)?,
        };
        grouped.push(line, &record[0], Some(label), view)?;
    }
    if grouped.order.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let mut specimens = Vec::with_capacity(grouped.order.len());
    for id in grouped.order {
        let label = grouped.labels[&id].expect("feature rows carry labels");
        let truth = taxonomy.label_path(label).expect("label index is valid");
        let views = grouped.views.remove(&id).unwrap_or_default();
        specimens.push(Specimen {
            id,
            label,
            truth,
            views,
        });
    }
    Dataset::new(dim, specimens)
}

/// Per-image class scores from an external model, one column per class label
/// in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub classes: usize,
    pub specimens: Vec<ScoredSpecimen>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSpecimen {
    pub id: String,
    /// label index, when the file carries a `label_leaf` column
    pub label: Option<usize>,
    pub views: Vec<View>,
}

/// Ingest `specimen_id,image_id[,label_leaf],s_1..s_K` with `K` the number of
/// class labels of `taxonomy`.
pub fn ingest_scores<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<ScoreTable, DatasetError> {
    let mut rdr = csv_reader(reader);
    let header = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(DatasetError::EmptyInput),
        Err(e) => return Err(malformed(1, e)),
    };
    let classes = taxonomy.labels().len();
    let labelled = header.get(2).is_some_and(|h| h.eq_ignore_ascii_case("label_leaf"));
    let skip = if labelled { 3 } else { 2 };
    if header.len() != skip + classes {
        return Err(DatasetError::DimensionMismatch {
            line: 1,
            expected: classes,
            found: header.len().saturating_sub(skip),
        });
    }
    let mut grouped = Grouped::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| malformed(i + 2, e))?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        if record.len() != skip + classes {
            return Err(DatasetError::DimensionMismatch {
                line,
                expected: classes,
                found: record.len().saturating_sub(skip),
            });
        }
        let label = if labelled {
            Some(
                taxonomy
                    .label_index_by_name(&record[2])
                    .ok_or_else(|| DatasetError::UnknownLeaf {
                        line,
                        name: record[2].to_string(),
                    })?,
            )
        } else {
            None
        };
        if record[0].is_empty() || record[1].is_empty() {
            return Err(malformed(line, "empty specimen or image id"));
        }
        let view = View {
            image_id: record[1].to_string(),
            values: parse_values(&record, skip, line)?,
        };
        grouped.push(line, &record[0], label, view)?;
    }
    if grouped.order.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let specimens = grouped
        .order
        .into_iter()
        .map(|id| ScoredSpecimen {
            label: grouped.labels[&id],
            views: grouped.views.remove(&id).unwrap_or_default(),
            id,
        })
        .collect();
    Ok(ScoreTable { classes, specimens })
}

/// Keep at most `cap` views, drawn uniformly without replacement from a
/// stream keyed by `seed` and the specimen id. Retained views keep their
/// original order; specimens at or under the cap are returned unchanged.
pub fn subsample_views(specimen: &Specimen, cap: usize, seed: u64) -> Specimen {
    let mut out = specimen.clone();
    out.views = retained_view_indices(specimen, cap, seed)
        .into_iter()
        .map(|i| specimen.views[i].clone())
        .collect();
    out
}

pub(crate) fn retained_view_indices(specimen: &Specimen, cap: usize, seed: u64) -> Vec<usize> {
    let n = specimen.views.len();
    let cap = cap.max(1);
    if n <= cap {
        return (0..n).collect();
    }
    SeededRng::for_label(seed, "views", &specimen.id).sample_indices(n, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::fixture;

    fn features(rows: &[&str]) -> String {
        let mut s = String::from("specimen_id,image_id,label_leaf,f1,f2\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn groups_views_by_specimen() {
        let t = fixture();
        let csv = features(&["a,1,Simuliidae,0.5,1", "a,2,Simuliidae,0.25,2"]);
        let d = ingest_features(csv.as_bytes(), &t).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.specimens()[0].views.len(), 2);
        assert_eq!(d.specimens()[0].truth.depth(), 2);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn mini_file_counts() {
        let t = fixture();
        let csv = features(&[
            "s1,i1,Elmis aenea,1,2",
            "s1,i2,Elmis aenea,1,2",
            "s1,i3,Elmis aenea,1,2",
            "s2,i1,Leuctra sp.,1,2",
            "s3,i1,Leuctra nigra,1,2",
            "s2,i2,Leuctra sp.,1,2",
            "s4,i1,Simuliidae,1,2",
            "s3,i2,Leuctra nigra,1,2",
            "s4,i2,Simuliidae,1,2",
            "s4,i3,Simuliidae,1,2",
        ]);
        let d = ingest_features(csv.as_bytes(), &t).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.image_count(), 10);
        let counts: Vec<usize> = d.specimens().iter().map(|s| s.views.len()).collect();
        assert_eq!(counts, vec![3, 2, 2, 3]);
        assert_eq!(d.get("s2").unwrap().truth.depth(), 3);
        assert_eq!(d.get("s3").unwrap().truth.depth(), 4);
    }

    #[test]
    fn feature_errors() {
        let t = fixture();
        assert_eq!(ingest_features("".as_bytes(), &t), Err(DatasetError::EmptyInput));
        assert_eq!(
            ingest_features(features(&[]).as_bytes(), &t),
            Err(DatasetError::EmptyInput)
        );
        assert!(matches!(
            ingest_features(features(&["a,1,Nope,1,2"]).as_bytes(), &t),
            Err(DatasetError::UnknownLeaf { line: 2, .. })
        ));
        assert!(matches!(
            ingest_features(features(&["a,1,Simuliidae,1"]).as_bytes(), &t),
            Err(DatasetError::DimensionMismatch { line: 2, .. })
        ));
        assert!(matches!(
            ingest_features(features(&["a,1,Simuliidae,1,2", "a,1,Simuliidae,1,2"]).as_bytes(), &t),
            Err(DatasetError::DuplicateImage { line: 3, .. })
        ));
        assert!(matches!(
            ingest_features(features(&["a,1,Simuliidae,1,2", "a,2,Elmis aenea,1,2"]).as_bytes(), &t),
            Err(DatasetError::ConflictingLabel { line: 3, .. })
        ));
        assert!(matches!(
            ingest_features(features(&["a,1,Simuliidae,x,2"]).as_bytes(), &t),
            Err(DatasetError::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            ingest_features(features(&["a,1,Simuliidae,NaN,2"]).as_bytes(), &t),
            Err(DatasetError::Malformed { .. })
        ));
    }

    #[test]
    fn scores_need_one_column_per_label() {
        let t = fixture();
        let k = t.labels().len();
        let header: Vec<String> = (1..=k).map(|i| format!("s_{i}")).collect();
        let row: Vec<String> = (0..k).map(|i| if i == 3 { "1" } else { "0" }.to_string()).collect();
        let csv = format!("specimen_id,image_id,{}\nx,1,{}\n", header.join(","), row.join(","));
        let table = ingest_scores(csv.as_bytes(), &t).unwrap();
        assert_eq!(table.classes, 39);
        assert_eq!(table.specimens[0].label, None);
        let labelled = format!(
            "specimen_id,image_id,label_leaf,{}\nx,1,Simuliidae,{}\n",
            header.join(","),
            row.join(",")
        );
        let table = ingest_scores(labelled.as_bytes(), &t).unwrap();
        assert_eq!(table.specimens[0].label, t.label_index_by_name("Simuliidae"));
        let short = "specimen_id,image_id,s_1,s_2\nx,1,0,1\n";
        assert!(matches!(
            ingest_scores(short.as_bytes(), &t),
            Err(DatasetError::DimensionMismatch {
                expected: 39,
                found: 2,
                ..
            })
        ));
    }

    fn specimen_with(n: usize) -> Specimen {
        let t = fixture();
        Specimen {
            id: "spec".into(),
            label: 0,
            truth: t.label_path(0).unwrap(),
            views: (0..n)
                .map(|i| View {
                    image_id: format!("img{i}"),
                    values: vec![i as f64],
                })
                .collect(),
        }
    }

    #[test]
    fn subsampling() {
        let s = specimen_with(60);
        let a = subsample_views(&s, 50, 9);
        assert_eq!(a.views.len(), 50);
        assert_eq!(a, subsample_views(&s, 50, 9));
        assert_ne!(a, subsample_views(&s, 50, 10));
        // never fabricates, keeps order
        let ids: Vec<usize> = a.views.iter().map(|v| v.values[0] as usize).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        let small = specimen_with(7);
        assert_eq!(subsample_views(&small, 50, 1), small);
        let once = subsample_views(&s, 10, 3);
        assert_eq!(subsample_views(&once, 10, 3), once);
    }
}
