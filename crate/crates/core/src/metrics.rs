//! Classification error (CE), context-sensitive error (CSE), level-adjusted
//! CSE (LCSE), per-rank errors, error structure, confusion matrices and
//! aggregation over data splits.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{loss_height, LabelPath, NodeId, PrefixMode, Taxonomy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no prediction records")]
    EmptyInput,
    #[error("no truth path reaches rank {0}")]
    NoEligibleRecords(usize),
    #[error("total level count {levels} is below the deepest truth depth {depth}")]
    TooFewLevels { levels: usize, depth: usize },
}

/// Truth and (possibly partial or absent) prediction for one specimen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub specimen_id: String,
    pub truth: LabelPath,
    pub pred: Option<LabelPath>,
}

impl PredictionRecord {
    pub fn new(specimen_id: impl Into<String>, truth: LabelPath, pred: Option<LabelPath>) -> Self {
        PredictionRecord {
            specimen_id: specimen_id.into(),
            truth,
            pred,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.pred.as_ref() == Some(&self.truth)
    }

    /// First rank where prediction and truth disagree; an absent prediction
    /// disagrees at rank 1.
    pub fn first_error_rank(&self) -> Option<usize> {
        match &self.pred {
            None => Some(1),
            Some(p) => p.first_divergence(&self.truth),
        }
    }

    pub fn pred_at_rank(&self, rank: usize) -> Option<NodeId> {
        self.pred.as_ref().and_then(|p| p.ancestor_at_rank(rank))
    }
}

fn non_empty(records: &[PredictionRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        Err(MetricsError::EmptyInput)
    } else {
        Ok(())
    }
}

/// 0-1 loss over exact paths; absent predictions count as wrong.
pub fn classification_error(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    non_empty(records)?;
    let wrong = records.iter().filter(|r| !r.is_correct()).count();
    Ok(wrong as f64 / records.len() as f64)
}

/// `(1 / (n H)) * sum of loss heights`.
pub fn cse(records: &[PredictionRecord], levels: usize, mode: PrefixMode) -> Result<f64, MetricsError> {
    non_empty(records)?;
    let depth = records.iter().map(|r| r.truth.depth()).max().unwrap_or(0);
    if levels < depth {
        return Err(MetricsError::TooFewLevels { levels, depth });
    }
    let total: usize = records
        .iter()
        .map(|r| loss_height(r.pred.as_ref(), &r.truth, mode))
        .sum();
    Ok(total as f64 / (records.len() * levels) as f64)
}

/// `(1 / n) * sum of loss_height_i / H_i` with `H_i` the truth depth.
pub fn lcse(records: &[PredictionRecord], mode: PrefixMode) -> Result<f64, MetricsError> {
    non_empty(records)?;
    let total: f64 = records
        .iter()
        .map(|r| loss_height(r.pred.as_ref(), &r.truth, mode) as f64 / r.truth.depth() as f64)
        .sum();
    Ok(total / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankError {
    pub errors: usize,
    /// records whose truth reaches the rank
    pub eligible: usize,
    pub ce: f64,
}

/// Errors at one rank over the records whose truth reaches it.
pub fn rank_error(records: &[PredictionRecord], rank: usize) -> Result<RankError, MetricsError> {
    rank_error_from(
        records
            .iter()
            .map(|r| (r.truth.ancestor_at_rank(rank), r.pred_at_rank(rank))),
        rank,
    )
}

fn rank_error_from<I>(pairs: I, rank: usize) -> Result<RankError, MetricsError>
where
    I: Iterator<Item = (Option<NodeId>, Option<NodeId>)>,
{
    let mut eligible = 0;
    let mut errors = 0;
    for (truth, pred) in pairs {
        let Some(truth) = truth else { continue };
        eligible += 1;
        if pred != Some(truth) {
            errors += 1;
        }
    }
    if eligible == 0 {
        return Err(MetricsError::NoEligibleRecords(rank));
    }
    Ok(RankError {
        errors,
        eligible,
        ce: errors as f64 / eligible as f64,
    })
}

pub fn ce_at_rank(records: &[PredictionRecord], rank: usize) -> Result<f64, MetricsError> {
    rank_error(records, rank).map(|e| e.ce)
}

/// Count of errors by the rank at which they first appear.
pub fn error_structure(records: &[PredictionRecord]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for rank in records.iter().filter_map(PredictionRecord::first_error_rank) {
        *counts.entry(rank).or_insert(0) += 1;
    }
    counts
}

/// Rows are truth taxa at one rank, columns predicted taxa at that rank plus
/// a trailing "absent" column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rank: usize,
    pub taxa: Vec<NodeId>,
    pub names: Vec<String>,
    /// `counts[row][col]`, `col == taxa.len()` is the absent column
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn absent_column(&self) -> usize {
        self.taxa.len()
    }

    pub fn row_sum(&self, row: usize) -> usize {
        self.counts[row].iter().sum()
    }

    pub fn off_diagonal(&self) -> usize {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, c)| c)
                    .sum::<usize>()
            })
            .sum()
    }

    pub fn get(&self, truth: NodeId, pred: Option<NodeId>) -> usize {
        let row = self.taxa.iter().position(|t| *t == truth);
        let col = match pred {
            Some(p) => self.taxa.iter().position(|t| *t == p),
            None => Some(self.absent_column()),
        };
        match (row, col) {
            (Some(r), Some(c)) => self.counts[r][c],
            _ => 0,
        }
    }
}

pub fn confusion_matrix(records: &[PredictionRecord], taxonomy: &Taxonomy, rank: usize) -> ConfusionMatrix {
    confusion_from(
        records
            .iter()
            .map(|r| (r.truth.ancestor_at_rank(rank), r.pred_at_rank(rank))),
        taxonomy,
        rank,
    )
}

fn confusion_from<I>(pairs: I, taxonomy: &Taxonomy, rank: usize) -> ConfusionMatrix
where
    I: Iterator<Item = (Option<NodeId>, Option<NodeId>)>,
{
    let taxa: Vec<NodeId> = taxonomy.nodes_at_rank(rank).map(|n| n.id).collect();
    let names = taxa.iter().map(|&t| taxonomy.name(t).to_string()).collect();
    let pos: HashMap<NodeId, usize> = taxa.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut counts = vec![vec![0; taxa.len() + 1]; taxa.len()];
    for (truth, pred) in pairs {
        let Some(row) = truth.and_then(|t| pos.get(&t)) else {
            continue;
        };
        let col = pred.and_then(|p| pos.get(&p).copied()).unwrap_or(taxa.len());
        counts[*row][col] += 1;
    }
    ConfusionMatrix {
        rank,
        taxa,
        names,
        counts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepestLevel {
    pub ce: f64,
    pub lcse: f64,
    pub cse: f64,
    pub errors: usize,
}

/// Evaluation of one prediction set (one split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: PrefixMode,
    pub n: usize,
    /// `None` when the predictions are per-rank only and do not form label
    /// paths (local per level classifiers).
    pub deepest: Option<DeepestLevel>,
    pub ce_per_rank: BTreeMap<usize, RankError>,
    pub err_structure: BTreeMap<usize, usize>,
    pub confusion: Vec<ConfusionMatrix>,
    /// specimens whose per-rank predictions are not taxonomically coherent
    pub incoherent: usize,
}

impl MetricsReport {
    pub fn ce_deepest(&self) -> Option<f64> {
        self.deepest.map(|d| d.ce)
    }

    pub fn lcse(&self) -> Option<f64> {
        self.deepest.map(|d| d.lcse)
    }
}

/// Full report over coherent prediction records.
pub fn evaluate(
    records: &[PredictionRecord],
    taxonomy: &Taxonomy,
    mode: PrefixMode,
) -> Result<MetricsReport, MetricsError> {
    let ce = classification_error(records)?;
    let deepest = DeepestLevel {
        ce,
        lcse: lcse(records, mode)?,
        cse: cse(records, taxonomy.levels(), mode)?,
        errors: records.iter().filter(|r| !r.is_correct()).count(),
    };
    let mut ce_per_rank = BTreeMap::new();
    let mut confusion = Vec::new();
    for rank in 1..=taxonomy.levels() {
        if let Ok(e) = rank_error(records, rank) {
            ce_per_rank.insert(rank, e);
            confusion.push(confusion_matrix(records, taxonomy, rank));
        }
    }
    Ok(MetricsReport {
        mode,
        n: records.len(),
        deepest: Some(deepest),
        ce_per_rank,
        err_structure: error_structure(records),
        confusion,
        incoherent: 0,
    })
}

/// Truth plus independent per-rank predictions (index `k` is rank `k + 1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPredictions {
    pub specimen_id: String,
    pub truth: LabelPath,
    pub ranks: Vec<Option<NodeId>>,
}

impl RankPredictions {
    /// Whether the predicted taxa chain parent to child without gaps.
    pub fn is_coherent(&self, taxonomy: &Taxonomy) -> bool {
        ranks_coherent(&self.ranks, taxonomy)
    }
}

/// Whether per-rank taxa (index `k` is rank `k + 1`) form a gap-free
/// parent-to-child chain from rank 1.
pub fn ranks_coherent(ranks: &[Option<NodeId>], taxonomy: &Taxonomy) -> bool {
    let present: Vec<NodeId> = ranks.iter().map_while(|r| *r).collect();
    if ranks[present.len()..].iter().any(Option::is_some) {
        return false;
    }
    present.is_empty() || taxonomy.path(present).is_ok()
}

/// Per-rank report for predictions that need not be coherent. Deepest-level
/// metrics and error structure are left empty.
pub fn evaluate_per_rank(
    rows: &[RankPredictions],
    taxonomy: &Taxonomy,
    mode: PrefixMode,
) -> Result<MetricsReport, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut ce_per_rank = BTreeMap::new();
    let mut confusion = Vec::new();
    for rank in 1..=taxonomy.levels() {
        if rows.iter().all(|r| r.ranks.get(rank - 1).copied().flatten().is_none()) {
            continue;
        }
        let pairs = || {
            rows.iter()
                .map(move |r| (r.truth.ancestor_at_rank(rank), r.ranks.get(rank - 1).copied().flatten()))
        };
        if let Ok(e) = rank_error_from(pairs(), rank) {
            ce_per_rank.insert(rank, e);
            confusion.push(confusion_from(pairs(), taxonomy, rank));
        }
    }
    Ok(MetricsReport {
        mode,
        n: rows.len(),
        deepest: None,
        ce_per_rank,
        err_structure: BTreeMap::new(),
        confusion,
        incoherent: rows.iter().filter(|r| !r.is_coherent(taxonomy)).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// sample standard deviation (n - 1); 0 for a single value
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(MeanSd {
            mean: mean.clamp(min, max),
            sd,
            min,
            max,
        })
    }
}

/// Mean and sd of each scalar over splits; error structure counts summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAggregate {
    pub mode: PrefixMode,
    pub splits: usize,
    pub n_total: usize,
    /// set when only one split was given and sd is reported as 0
    pub single_split: bool,
    pub ce: Option<MeanSd>,
    pub lcse: Option<MeanSd>,
    pub cse: Option<MeanSd>,
    pub ce_per_rank: BTreeMap<usize, MeanSd>,
    pub err_structure: BTreeMap<usize, usize>,
    pub incoherent: usize,
}

pub fn aggregate_splits(reports: &[MetricsReport]) -> Result<SplitAggregate, MetricsError> {
    let first = reports.first().ok_or(MetricsError::EmptyInput)?;
    let deepest: Vec<DeepestLevel> = reports.iter().filter_map(|r| r.deepest).collect();
    let scalar =
        |f: fn(&DeepestLevel) -> f64| -> Option<MeanSd> { MeanSd::of(&deepest.iter().map(f).collect::<Vec<_>>()) };
    let mut per_rank: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut err_structure = BTreeMap::new();
    for report in reports {
        for (rank, e) in &report.ce_per_rank {
            per_rank.entry(*rank).or_default().push(e.ce);
        }
        for (rank, c) in &report.err_structure {
            *err_structure.entry(*rank).or_insert(0) += c;
        }
    }
    Ok(SplitAggregate {
        mode: first.mode,
        splits: reports.len(),
        n_total: reports.iter().map(|r| r.n).sum(),
        single_split: reports.len() == 1,
        ce: scalar(|d| d.ce),
        lcse: scalar(|d| d.lcse),
        cse: scalar(|d| d.cse),
        ce_per_rank: per_rank
            .into_iter()
            .filter_map(|(k, v)| MeanSd::of(&v).map(|m| (k, m)))
            .collect(),
        err_structure,
        incoherent: reports.iter().map(|r| r.incoherent).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::parse_taxonomy_str;
    use approx::assert_abs_diff_eq;

    fn fig2() -> Taxonomy {
        parse_taxonomy_str(
            "taxa,species,genus,family,order\n\
             FamA,-,-,FamA,OrdA\n\
             SpA,SpA,GenA,FamB,OrdA\n\
             SpB,SpB,GenA,FamB,OrdA\n\
             GenB,-,GenB,FamB,OrdA\n\
             SpC,SpC,GenC,FamC,OrdA\n",
        )
        .unwrap()
    }

    fn path(t: &Taxonomy, s: &str) -> LabelPath {
        let names: Vec<&str> = s.split('/').collect();
        t.path_from_names(&names).unwrap()
    }

    fn rec(t: &Taxonomy, truth: &str, pred: Option<&str>) -> PredictionRecord {
        PredictionRecord::new("s", path(t, truth), pred.map(|p| path(t, p)))
    }

    const SP_A: &str = "OrdA/FamB/GenA/SpA";
    const SP_B: &str = "OrdA/FamB/GenA/SpB";
    const SP_C: &str = "OrdA/FamC/GenC/SpC";
    const FAM_A: &str = "OrdA/FamA";

    #[test]
    fn ce_examples() {
        let t = fig2();
        let all_right = vec![rec(&t, SP_A, Some(SP_A)), rec(&t, FAM_A, Some(FAM_A))];
        assert_eq!(classification_error(&all_right).unwrap(), 0.0);
        let all_absent = vec![rec(&t, SP_A, None), rec(&t, FAM_A, None)];
        assert_eq!(classification_error(&all_absent).unwrap(), 1.0);
        let one_wrong = vec![
            rec(&t, SP_A, Some(SP_A)),
            rec(&t, SP_B, Some(SP_A)),
            rec(&t, SP_C, Some(SP_C)),
        ];
        assert_abs_diff_eq!(classification_error(&one_wrong).unwrap(), 1.0 / 3.0);
        assert_eq!(classification_error(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn cse_examples() {
        let t = fig2();
        let pm = PrefixMode::PartialCredit;
        assert_eq!(cse(&[rec(&t, SP_A, Some(SP_A))], 4, pm).unwrap(), 0.0);
        // the only order is shared, so the maximal loss needs an absent prediction
        assert_eq!(cse(&[rec(&t, SP_A, None)], 4, pm).unwrap(), 1.0);
        let two = vec![rec(&t, SP_A, Some(SP_A)), rec(&t, SP_A, Some(SP_B))];
        assert_abs_diff_eq!(cse(&two, 4, pm).unwrap(), 1.0 / 8.0);
        assert_eq!(
            cse(&two, 3, pm),
            Err(MetricsError::TooFewLevels { levels: 3, depth: 4 })
        );
    }

    #[test]
    fn lcse_examples() {
        let t = fig2();
        let pm = PrefixMode::PartialCredit;
        assert_eq!(lcse(&[rec(&t, SP_A, Some(SP_A))], pm).unwrap(), 0.0);
        assert_eq!(lcse(&[rec(&t, FAM_A, None)], pm).unwrap(), 1.0);
        let mixed = vec![rec(&t, SP_A, Some(SP_B)), rec(&t, FAM_A, Some(FAM_A))];
        assert_abs_diff_eq!(lcse(&mixed, pm).unwrap(), 0.125);
        assert!(lcse(&mixed, pm).unwrap() <= classification_error(&mixed).unwrap());
    }

    #[test]
    fn rank_errors() {
        let t = fig2();
        let perfect = vec![rec(&t, SP_A, Some(SP_A)), rec(&t, FAM_A, Some(FAM_A))];
        for r in 1..=4 {
            assert_eq!(ce_at_rank(&perfect, r).unwrap(), 0.0);
        }
        let species_only = vec![rec(&t, SP_A, Some(SP_B))];
        for r in 1..=3 {
            assert_eq!(ce_at_rank(&species_only, r).unwrap(), 0.0);
        }
        assert_eq!(ce_at_rank(&species_only, 4).unwrap(), 1.0);
        // one family confusion among four flat predictions
        let flat = vec![
            rec(&t, SP_A, Some(SP_A)),
            rec(&t, SP_B, Some(SP_B)),
            rec(&t, SP_C, Some(SP_A)),
            rec(&t, FAM_A, Some(FAM_A)),
        ];
        assert_eq!(ce_at_rank(&flat, 1).unwrap(), 0.0);
        assert_abs_diff_eq!(ce_at_rank(&flat, 2).unwrap(), 1.0 / 4.0);
        // rank 3 only sees the three deeper truths
        assert_eq!(rank_error(&flat, 3).unwrap().eligible, 3);
        assert_eq!(
            ce_at_rank(&[rec(&t, FAM_A, None)], 3),
            Err(MetricsError::NoEligibleRecords(3))
        );
    }

    #[test]
    fn error_structure_examples() {
        let t = fig2();
        let fam = error_structure(&[rec(&t, SP_A, Some(SP_C))]);
        assert_eq!(fam, BTreeMap::from([(2, 1)]));
        let absent = error_structure(&[rec(&t, SP_A, None)]);
        assert_eq!(absent, BTreeMap::from([(1, 1)]));
        let prefix = error_structure(&[rec(&t, SP_A, Some("OrdA/FamB"))]);
        assert_eq!(prefix, BTreeMap::from([(3, 1)]));
        assert!(error_structure(&[rec(&t, SP_A, Some(SP_A))]).is_empty());
    }

    #[test]
    fn confusion_examples() {
        let t = fig2();
        let perfect = vec![rec(&t, SP_A, Some(SP_A)), rec(&t, SP_B, Some(SP_B))];
        let m = confusion_matrix(&perfect, &t, 4);
        assert_eq!(m.off_diagonal(), 0);
        let sp_a = path(&t, SP_A).last();
        let sp_b = path(&t, SP_B).last();
        assert_eq!(m.get(sp_a, Some(sp_a)), 1);

        let confused = vec![
            rec(&t, SP_A, Some(SP_B)),
            rec(&t, SP_A, Some(SP_A)),
            rec(&t, SP_A, Some("OrdA/FamB/GenA")),
        ];
        let m = confusion_matrix(&confused, &t, 4);
        assert_eq!(m.off_diagonal(), 2);
        assert_eq!(m.get(sp_a, Some(sp_b)), 1);
        assert_eq!(m.get(sp_a, None), 1);
        let row = m.taxa.iter().position(|x| *x == sp_a).unwrap();
        assert_eq!(m.row_sum(row), 3);
    }

    #[test]
    fn aggregate_examples() {
        let t = fig2();
        let report = |wrong: usize, n: usize| {
            let recs: Vec<_> = (0..n)
                .map(|i| rec(&t, SP_A, Some(if i < wrong { SP_B } else { SP_A })))
                .collect();
            evaluate(&recs, &t, PrefixMode::PartialCredit).unwrap()
        };
        let same = aggregate_splits(&[report(1, 10), report(1, 10)]).unwrap();
        assert_eq!(same.ce.unwrap().sd, 0.0);
        let two = aggregate_splits(&[report(1, 10), report(3, 10)]).unwrap();
        assert_abs_diff_eq!(two.ce.unwrap().mean, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(two.ce.unwrap().sd, 0.1414213562373095, epsilon = 1e-12);
        assert_eq!(two.err_structure, BTreeMap::from([(4, 4)]));
        assert_eq!(two.n_total, 20);
        let single = aggregate_splits(&[report(2, 10)]).unwrap();
        assert!(single.single_split);
        assert_eq!(single.ce.unwrap().sd, 0.0);
        assert_eq!(aggregate_splits(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn per_rank_reports_flag_incoherence() {
        let t = fig2();
        let a = path(&t, SP_A);
        let c = path(&t, SP_C);
        let rows = vec![
            RankPredictions {
                specimen_id: "1".into(),
                truth: a.clone(),
                ranks: vec![Some(a.nodes()[0]), Some(a.nodes()[1]), None, None],
            },
            RankPredictions {
                specimen_id: "2".into(),
                truth: c.clone(),
                ranks: vec![Some(c.nodes()[0]), Some(a.nodes()[1]), None, None],
            },
        ];
        let report = evaluate_per_rank(&rows, &t, PrefixMode::PartialCredit).unwrap();
        assert!(report.deepest.is_none());
        assert_eq!(report.ce_per_rank[&1].errors, 0);
        assert_eq!(report.ce_per_rank[&2].errors, 1);
        assert!(!report.ce_per_rank.contains_key(&3));
        assert_eq!(report.incoherent, 0);

        let gap = RankPredictions {
            specimen_id: "3".into(),
            truth: a.clone(),
            ranks: vec![None, Some(a.nodes()[1]), None, None],
        };
        assert!(!gap.is_coherent(&t));
    }
}
