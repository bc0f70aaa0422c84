//! Hyperparameter search for the SVM over `(c, gamma)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_svm, ClassId, Features, LearnerError, PreprocessConfig, SvmHyper, TrainedModel};
use crate::hierarchy::aggregate::{aggregate, AggregationRule};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPhase {
    /// every grid point on full data
    Single,
    /// every grid point on one random view per specimen, then the 3x3
    /// neighborhood `{x/2, x, 2x}` of the winner on full data
    CoarseThenRefine,
}

impl fmt::Display for GridPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridPhase::Single => "single",
            GridPhase::CoarseThenRefine => "coarse-refine",
        })
    }
}

impl FromStr for GridPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(GridPhase::Single),
            "coarse-refine" | "coarse-then-refine" => Ok(GridPhase::CoarseThenRefine),
            other => Err(format!("unknown grid phase '{other}' (use single or coarse-refine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
    pub phase: GridPhase,
}

fn powers_of_two(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

impl GridSpec {
    /// Grid for flat and per-level classifiers.
    pub fn flat_default() -> Self {
        GridSpec {
            c: powers_of_two(8, 11),
            gamma: powers_of_two(-11, -8),
            phase: GridPhase::Single,
        }
    }

    /// Wider grid for the per-parent-node classifiers.
    pub fn cascade_default() -> Self {
        GridSpec {
            c: powers_of_two(1, 15),
            gamma: powers_of_two(-15, -1),
            phase: GridPhase::CoarseThenRefine,
        }
    }

    pub fn single(c: f64, gamma: f64) -> Self {
        GridSpec {
            c: vec![c],
            gamma: vec![gamma],
            phase: GridPhase::Single,
        }
    }

    pub fn points(&self) -> Vec<GridPoint> {
        self.c
            .iter()
            .flat_map(|&c| self.gamma.iter().map(move |&gamma| GridPoint { c, gamma }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub gamma: f64,
}

impl GridPoint {
    pub fn hyper(&self) -> SvmHyper {
        SvmHyper::new(self.c, self.gamma)
    }

    /// The 3x3 multiplicative neighborhood, in ascending (c, gamma) order.
    pub fn neighborhood(&self) -> Vec<GridPoint> {
        let f = [0.5, 1.0, 2.0];
        f.iter()
            .flat_map(|a| {
                f.iter().map(move |b| GridPoint {
                    c: self.c * a,
                    gamma: self.gamma * b,
                })
            })
            .collect()
    }
}

/// A specimen as seen by one classifier: its class and all retained views.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpecimen {
    pub id: String,
    pub label: ClassId,
    pub views: Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub point: GridPoint,
    pub coarse: bool,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: GridPoint,
    pub accuracy: f64,
    /// accuracy measured on training data because the validation set was empty
    pub scored_on_training: bool,
    pub evaluations: Vec<GridEvaluation>,
    /// refit at `best` on train and validation specimens together
    pub model: TrainedModel,
}

fn stack(specimens: &[&LabeledSpecimen], dim: usize) -> (Features, Vec<ClassId>) {
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

fn one_view_each(specimens: &[LabeledSpecimen], seed: u64) -> Vec<LabeledSpecimen> {
    specimens
        .iter()
        .map(|s| {
            let mut rng = SeededRng::for_label(seed, "coarse-view", &s.id);
            let pick = rng.below(s.views.rows() as u64) as usize;
            LabeledSpecimen {
                id: s.id.clone(),
                label: s.label,
                views: s.views.select(&[pick]),
            }
        })
        .collect()
}

/// Specimen-level accuracy with majority vote over views.
pub fn specimen_accuracy(model: &TrainedModel, specimens: &[LabeledSpecimen]) -> Result<f64, LearnerError> {
    if specimens.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for s in specimens {
        let outs = model.predict(&s.views)?;
        let decided = aggregate(&outs, &model.classes, AggregationRule::MajorityVote)
            .map(|a| a.class)
            .map_err(|_| LearnerError::TooFewRows { needed: 1, found: 0 })?;
        if decided == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / specimens.len() as f64)
}

fn evaluate(
    points: &[GridPoint],
    train: &[LabeledSpecimen],
    val: &[LabeledSpecimen],
    dim: usize,
    prep: &PreprocessConfig,
    coarse: bool,
) -> Result<Vec<GridEvaluation>, LearnerError> {
    let refs: Vec<&LabeledSpecimen> = train.iter().collect();
    let (x, y) = stack(&refs, dim);
    let judge = if val.is_empty() { train } else { val };
    points
        .par_iter()
        .map(|p| {
            let model = train_svm(&x, &y, &p.hyper(), prep)?;
            Ok(GridEvaluation {
                point: *p,
                coarse,
                accuracy: specimen_accuracy(&model, judge)?,
            })
        })
        .collect()
}

/// Highest accuracy; ties go to the smaller c, then the smaller gamma.
fn pick(evals: &[GridEvaluation]) -> &GridEvaluation {
    evals
        .iter()
        .min_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then(a.point.c.total_cmp(&b.point.c))
                .then(a.point.gamma.total_cmp(&b.point.gamma))
        })
        .expect("non-empty evaluations")
}

/// Select `(c, gamma)` by validation accuracy and refit on train + val.
/// `seed` drives the coarse phase's view selection.
pub fn grid_search(
    spec: &GridSpec,
    train: &[LabeledSpecimen],
    val: &[LabeledSpecimen],
    prep: &PreprocessConfig,
    seed: u64,
) -> Result<GridResult, LearnerError> {
    let points = spec.points();
    if points.is_empty() {
        return Err(LearnerError::EmptyGrid);
    }
    let dim = train
        .first()
        .map(|s| s.views.cols())
        .ok_or(LearnerError::TooFewRows { needed: 2, found: 0 })?;
    if val.is_empty() {
        log::warn!("empty validation set; grid points are scored on training specimens");
    }

    let mut evaluations = Vec::new();
    let finalists = match spec.phase {
        GridPhase::Single => points,
        GridPhase::CoarseThenRefine => {
            let coarse = evaluate(
                &points,
                &one_view_each(train, seed),
                &one_view_each(val, seed),
                dim,
                prep,
                true,
            )?;
            let center = pick(&coarse).point;
            evaluations.extend(coarse);
            center.neighborhood()
        }
    };
    let fine = evaluate(&finalists, train, val, dim, prep, false)?;
    let winner = pick(&fine).clone();
    evaluations.extend(fine);

    let all: Vec<&LabeledSpecimen> = train.iter().chain(val).collect();
    let (x, y) = stack(&all, dim);
    let model = train_svm(&x, &y, &winner.point.hyper(), prep)?;
    Ok(GridResult {
        best: winner.point,
        accuracy: winner.accuracy,
        scored_on_training: val.is_empty(),
        evaluations,
        model,
    })
}
