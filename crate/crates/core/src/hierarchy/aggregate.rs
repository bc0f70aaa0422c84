use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HierarchyError;
use crate::learners::{ClassId, ViewOutput};

/// How per-image outputs are combined into one decision per specimen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationRule {
    /// argmax of the element-wise mean of per-view score vectors
    AverageScore,
    /// modal per-view label; ties go to the higher mean score, then to the
    /// class that comes first in taxon order
    MajorityVote,
}

impl fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationRule::AverageScore => "average-score",
            AggregationRule::MajorityVote => "majority-vote",
        })
    }
}

impl FromStr for AggregationRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" | "average-score" => Ok(AggregationRule::AverageScore),
            "majority" | "majority-vote" => Ok(AggregationRule::MajorityVote),
            other => Err(format!(
                "unknown aggregation rule '{other}' (use average-score or majority-vote)"
            )),
        }
    }
}

/// Specimen-level decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub class: ClassId,
    /// mean per-view score vector, aligned with the model's classes; vote
    /// counts stand in for scores when the learner has none
    pub scores: Vec<f64>,
    pub view_votes: Vec<usize>,
}

/// `classes` must be the model's class list in taxon order, which is also
/// ascending id order.
pub fn aggregate(
    outputs: &[ViewOutput],
    classes: &[ClassId],
    rule: AggregationRule,
) -> Result<Aggregate, HierarchyError> {
    if outputs.is_empty() {
        return Err(HierarchyError::NoViews);
    }
    let k = classes.len();
    let has_scores = outputs.iter().all(|o| o.scores.is_some());
    if rule == AggregationRule::AverageScore && !has_scores {
        return Err(HierarchyError::RuleUnsupported(rule));
    }
    let mut mean = vec![0.0; k];
    for o in outputs {
        let row: Vec<f64> = match (&o.scores, &o.votes) {
            (Some(s), _) if has_scores => s.clone(),
            (_, Some(v)) => v.iter().map(|&x| f64::from(x)).collect(),
            _ => vec![0.0; k],
        };
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= outputs.len() as f64);
    let mut view_votes = vec![0usize; k];
    for o in outputs {
        if let Ok(pos) = classes.binary_search(&o.label) {
            view_votes[pos] += 1;
        }
    }
    // first maximum wins, which is the canonical-order tie-break
    let mut best = 0;
    for c in 1..k {
        let better = match rule {
            AggregationRule::AverageScore => mean[c] > mean[best],
            AggregationRule::MajorityVote => {
                view_votes[c] > view_votes[best] || (view_votes[c] == view_votes[best] && mean[c] > mean[best])
            }
        };
        if better {
            best = c;
        }
    }
    Ok(Aggregate {
        class: classes[best],
        scores: mean,
        view_votes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(label: ClassId, scores: &[f64]) -> ViewOutput {
        ViewOutput {
            label,
            scores: Some(scores.to_vec()),
            votes: None,
        }
    }

    #[test]
    fn agreement_and_plain_majority() {
        let classes = [3, 8];
        let views = vec![scored(8, &[0.0, 1.0]), scored(8, &[0.2, 0.9])];
        for rule in [AggregationRule::AverageScore, AggregationRule::MajorityVote] {
            assert_eq!(aggregate(&views, &classes, rule).unwrap().class, 8);
        }
        let abb = vec![scored(3, &[5.0, 0.0]), scored(8, &[0.0, 1.0]), scored(8, &[0.0, 1.0])];
        assert_eq!(
            aggregate(&abb, &classes, AggregationRule::MajorityVote).unwrap().class,
            8
        );
        assert_eq!(
            aggregate(&abb, &classes, AggregationRule::AverageScore).unwrap().class,
            3
        );
    }

    /// Every 2-view, 2-class case on a small score lattice, checked against a
    /// direct statement of the rule.
    #[test]
    fn vote_ties_against_enumeration() {
        let classes = [1, 2];
        let lattice = [-1.0, 0.0, 0.5, 1.0];
        for &a0 in &lattice {
            for &a1 in &lattice {
                for &b0 in &lattice {
                    for &b1 in &lattice {
                        let views = [[a0, a1], [b0, b1]];
                        let labels: Vec<usize> = views.iter().map(|v| if v[1] > v[0] { 1 } else { 0 }).collect();
                        let outs: Vec<ViewOutput> =
                            views.iter().zip(&labels).map(|(v, &l)| scored(classes[l], v)).collect();
                        let count1 = labels.iter().filter(|&&l| l == 1).count();
                        let mean0 = (a0 + b0) / 2.0;
                        let mean1 = (a1 + b1) / 2.0;
                        let want = if count1 == 2 {
                            2
                        } else if count1 == 0 {
                            1
                        } else if mean1 > mean0 {
                            2
                        } else {
                            1
                        };
                        let got = aggregate(&outs, &classes, AggregationRule::MajorityVote).unwrap();
                        assert_eq!(got.class, want, "{views:?}");
                        let avg = if mean1 > mean0 { 2 } else { 1 };
                        assert_eq!(
                            aggregate(&outs, &classes, AggregationRule::AverageScore).unwrap().class,
                            avg
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn votes_only_learner() {
        let classes = [0, 1, 2];
        let v = |label, votes: [u32; 3]| ViewOutput {
            label,
            scores: None,
            votes: Some(votes.to_vec()),
        };
        let outs = vec![v(0, [2, 1, 0]), v(1, [1, 2, 0])];
        assert_eq!(
            aggregate(&outs, &classes, AggregationRule::AverageScore),
            Err(HierarchyError::RuleUnsupported(AggregationRule::AverageScore))
        );
        // tied votes and tied mean votes fall back to taxon order
        assert_eq!(
            aggregate(&outs, &classes, AggregationRule::MajorityVote).unwrap().class,
            0
        );
        assert_eq!(
            aggregate(&[], &classes, AggregationRule::MajorityVote),
            Err(HierarchyError::NoViews)
        );
        assert_eq!("majority".parse::<AggregationRule>(), Ok(AggregationRule::MajorityVote));
    }
}
