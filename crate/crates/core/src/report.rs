//! Result tables over one or more systems.
//!
//! A [`Report`] holds one column per system (for instance "flat vote" or
//! "cascade"), each aggregated over its data splits. The text rendering has
//! one block of rows for the deepest level (CE and LCSE, mean and sd), one
//! block per rank (CE mean and sd) and the error structure (errors counted at
//! the rank where they first occur, summed over splits).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{aggregate_splits, MeanSd, MetricsError, MetricsReport, SplitAggregate};
use crate::taxonomy::{PrefixMode, Taxonomy};

pub const REPORT_FORMAT: &str = "hierclass-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportColumn {
    pub name: String,
    pub aggregate: SplitAggregate,
    /// the per-split reports the aggregate was built from
    pub splits: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    pub mode: PrefixMode,
    /// `rank_names[k]` names rank `k + 1`
    pub rank_names: Vec<String>,
    pub columns: Vec<ReportColumn>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("column '{name}' was scored in {found} mode, the report uses {expected}")]
    ModeMismatch {
        name: String,
        expected: PrefixMode,
        found: PrefixMode,
    },
    #[error("reports have different rank names")]
    RankMismatch,
    #[error("not a report: {0}")]
    Format(String),
}

impl Report {
    pub fn new(taxonomy: &Taxonomy, mode: PrefixMode) -> Self {
        Report {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            manifest: None,
            mode,
            rank_names: (1..=taxonomy.levels())
                .map(|r| taxonomy.rank_name(r).to_string())
                .collect(),
            columns: Vec::new(),
        }
    }

    pub fn add_column(&mut self, name: &str, splits: Vec<MetricsReport>) -> Result<(), ReportError> {
        let aggregate = aggregate_splits(&splits)?;
        if aggregate.mode != self.mode {
            return Err(ReportError::ModeMismatch {
                name: name.to_string(),
                expected: self.mode,
                found: aggregate.mode,
            });
        }
        self.columns.push(ReportColumn {
            name: name.to_string(),
            aggregate,
            splits,
        });
        Ok(())
    }

    /// Concatenate the columns of several reports.
    pub fn merge(reports: Vec<Report>) -> Result<Report, ReportError> {
        let mut iter = reports.into_iter();
        let mut out = iter.next().ok_or(ReportError::Metrics(MetricsError::EmptyInput))?;
        for r in iter {
            if r.rank_names != out.rank_names {
                return Err(ReportError::RankMismatch);
            }
            if r.mode != out.mode {
                return Err(ReportError::ModeMismatch {
                    name: r.columns.first().map_or_else(String::new, |c| c.name.clone()),
                    expected: out.mode,
                    found: r.mode,
                });
            }
            out.columns.extend(r.columns);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(bytes: &[u8]) -> Result<Report, ReportError> {
        let report: Report = serde_json::from_slice(bytes).map_err(|e| ReportError::Format(e.to_string()))?;
        if report.format != REPORT_FORMAT || report.version != REPORT_VERSION {
            return Err(ReportError::Format(format!("{} v{}", report.format, report.version)));
        }
        Ok(report)
    }

    fn rank_name(&self, rank: usize) -> &str {
        rank.checked_sub(1)
            .and_then(|i| self.rank_names.get(i))
            .map_or("?", String::as_str)
    }

    /// Ranks with a CE value in at least one column.
    fn scored_ranks(&self) -> Vec<usize> {
        let mut ranks: Vec<usize> = self
            .columns
            .iter()
            .flat_map(|c| c.aggregate.ce_per_rank.keys().copied())
            .collect();
        ranks.sort_unstable();
        ranks.dedup();
        ranks
    }

    /// Labelled rows of cells, `None` for a cell with no value.
    pub fn rows(&self) -> Vec<(String, Vec<Option<String>>)> {
        let num = |v: f64| Some(format!("{v:.3}"));
        let stat = |f: &dyn Fn(&SplitAggregate) -> Option<MeanSd>, sd: bool| -> Vec<Option<String>> {
            self.columns
                .iter()
                .map(|c| f(&c.aggregate).and_then(|m| num(if sd { m.sd } else { m.mean })))
                .collect()
        };
        let mut rows = vec![("Deepest level".to_string(), Vec::new())];
        rows.push(("  mean CE".into(), stat(&|a| a.ce, false)));
        rows.push(("  sd(CE)".into(), stat(&|a| a.ce, true)));
        rows.push(("  mean LCSE".into(), stat(&|a| a.lcse, false)));
        rows.push(("  sd(LCSE)".into(), stat(&|a| a.lcse, true)));
        for rank in self.scored_ranks() {
            let mut title = self.rank_name(rank).to_string();
            if let Some(first) = title.get_mut(..1) {
                first.make_ascii_uppercase();
            }
            rows.push((title, Vec::new()));
            rows.push(("  mean CE".into(), stat(&|a| a.ce_per_rank.get(&rank).copied(), false)));
            rows.push(("  sd(CE)".into(), stat(&|a| a.ce_per_rank.get(&rank).copied(), true)));
        }
        rows.push(("Error structure".to_string(), Vec::new()));
        for rank in 1..=self.rank_names.len() {
            let cells = self
                .columns
                .iter()
                .map(|c| {
                    c.aggregate
                        .ce
                        .map(|_| c.aggregate.err_structure.get(&rank).copied().unwrap_or(0).to_string())
                })
                .collect();
            rows.push((format!("  #ERR({})", self.rank_name(rank)), cells));
        }
        let count = |f: fn(&SplitAggregate) -> usize| -> Vec<Option<String>> {
            self.columns.iter().map(|c| Some(f(&c.aggregate).to_string())).collect()
        };
        rows.push(("n_total".into(), count(|a| a.n_total)));
        rows.push(("splits".into(), count(|a| a.splits)));
        rows.push(("incoherent".into(), count(|a| a.incoherent)));
        rows
    }

    /// Aligned plain-text table; `-` marks cells without a value.
    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                rows.iter()
                    .filter_map(|(_, cells)| cells.get(i).map(|v| v.as_deref().map_or(1, str::len)))
                    .max()
                    .unwrap_or(1)
                    .max(c.name.len())
            })
            .collect();
        let mut out = String::new();
        if let Some(m) = &self.manifest {
            let _ = writeln!(out, "# manifest={m}");
        }
        let _ = writeln!(out, "# prefix-mode={}", self.mode);
        let _ = write!(out, "{:label_width$}", "");
        for (c, w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", c.name);
        }
        out.push('\n');
        for (label, cells) in rows {
            let _ = write!(out, "{label:label_width$}");
            if !cells.is_empty() {
                for (cell, w) in cells.iter().zip(&widths) {
                    let _ = write!(out, "  {:>w$}", cell.as_deref().unwrap_or("-"));
                }
            }
            out.truncate(out.trim_end().len());
            out.push('\n');
        }
        if self.columns.iter().any(|c| c.aggregate.single_split) {
            out.push_str("# sd is 0 for columns with a single split\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate, PredictionRecord};
    use crate::taxonomy::parse_taxonomy_str;

    fn tree() -> Taxonomy {
        parse_taxonomy_str(
            "taxa,species,genus,family,order\n\
             SpA,SpA,GenA,FamB,OrdA\n\
             SpB,SpB,GenA,FamB,OrdA\n\
             SpC,SpC,GenC,FamC,OrdB\n",
        )
        .unwrap()
    }

    fn split(t: &Taxonomy, wrong: bool) -> MetricsReport {
        let a = t.path_from_names(&["OrdA", "FamB", "GenA", "SpA"]).unwrap();
        let b = t.path_from_names(&["OrdA", "FamB", "GenA", "SpB"]).unwrap();
        let pred = if wrong { b.clone() } else { a.clone() };
        let records = vec![
            PredictionRecord::new("1", a, Some(pred)),
            PredictionRecord::new("2", b.clone(), Some(b)),
        ];
        evaluate(&records, t, PrefixMode::PartialCredit).unwrap()
    }

    #[test]
    fn perfect_column_is_all_zero() {
        let t = tree();
        let mut r = Report::new(&t, PrefixMode::PartialCredit);
        r.add_column("perfect", vec![split(&t, false), split(&t, false)])
            .unwrap();
        let text = r.to_text();
        for (label, cells) in r.rows() {
            if label.contains("#ERR") {
                assert_eq!(cells, vec![Some("0".to_string())]);
            } else if label.contains("CE") || label.contains("LCSE") {
                assert_eq!(cells, vec![Some("0.000".to_string())]);
            }
        }
        assert!(text.contains("sd(LCSE)"));
        assert!(text.contains("#ERR(species)"));
    }

    #[test]
    fn columns_and_error_counts() {
        let t = tree();
        let mut r = Report::new(&t, PrefixMode::PartialCredit);
        r.add_column("a", vec![split(&t, true), split(&t, false)]).unwrap();
        let mut other = Report::new(&t, PrefixMode::PartialCredit);
        other.add_column("b", vec![split(&t, true)]).unwrap();
        let r = Report::merge(vec![r, other]).unwrap();
        let rows = r.rows();
        let find = |l: &str| rows.iter().find(|(x, _)| x.trim() == l).unwrap().1.clone();
        // CE per split {0.5, 0}: mean 0.25, sd sqrt(0.125)
        assert_eq!(find("mean CE")[0].as_deref(), Some("0.250"));
        assert_eq!(find("sd(CE)")[0].as_deref(), Some("0.354"));
        assert_eq!(find("#ERR(species)"), vec![Some("1".into()), Some("1".into())]);
        assert_eq!(find("n_total"), vec![Some("4".into()), Some("2".into())]);
        let back = Report::from_json(r.to_json().as_bytes()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("sd is 0"));
    }

    #[test]
    fn mode_mismatch() {
        let t = tree();
        let mut r = Report::new(&t, PrefixMode::Strict);
        assert!(matches!(
            r.add_column("a", vec![split(&t, false)]),
            Err(ReportError::ModeMismatch { .. })
        ));
    }
}
