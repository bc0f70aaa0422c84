use std::collections::{BTreeMap, HashMap};

use super::train::{class_of_node, KeyedModel, NodeReport};
use super::*;
use crate::dataset::{
    generate_synthetic, make_splits, DataSplit, Scheme, ScoreTable, ScoredSpecimen, SplitSpec, SyntheticSpec, View,
};
use crate::learners::{Features, GridSpec, PreprocessConfig};
use crate::metrics::evaluate;
use crate::taxonomy::{fixture, parse_taxonomy_str, LabelPath, PrefixMode, Taxonomy};

const FIG2: &str = "taxa,species,genus,family,order\n\
    FamA,-,-,FamA,OrdA\n\
    SpA,SpA,GenA,FamB,OrdA\n\
    SpB,SpB,GenA,FamB,OrdA\n\
    GenB,-,GenB,FamB,OrdA\n\
    SpC,SpC,GenC,FamC,OrdA\n";

const TWO_ORDERS: &str = "taxa,species,genus,family,order\n\
    Ga,-,Ga,Fa,Oa\n\
    Gb,-,Gb,Fa,Oa\n\
    Gc,-,Gc,Fb,Oa\n\
    Gd,-,Gd,Fc,Ob\n\
    Fd,-,-,Fd,Ob\n";

fn path(t: &Taxonomy, names: &str) -> LabelPath {
    t.path_from_names(&names.split('/').collect::<Vec<_>>()).unwrap()
}

fn constant(key: &str, class: u32) -> KeyedModel {
    KeyedModel {
        key: key.to_string(),
        model: NodeModel::Constant { class },
        report: NodeReport {
            key: key.to_string(),
            candidates: vec![class],
            dropped: vec![],
            train_specimens: 0,
            val_specimens: 0,
            selected: None,
            val_accuracy: None,
            scored_on_training: false,
        },
    }
}

/// Cascade whose every node answers along `truth` (the sentinel where the
/// truth stops).
fn perfect_cascade(plan: &CascadePlan, truth: &LabelPath) -> TrainedTopology {
    let models = plan
        .entries
        .iter()
        .map(|e| {
            let depth = e.rank - 1;
            let class = truth.nodes().get(depth).map_or(SENTINEL, |n| class_of_node(*n));
            let class = if e.children.iter().any(|c| class_of_node(*c) == class) || class == SENTINEL {
                class
            } else {
                class_of_node(e.children[0])
            };
            constant(&e.key(), class)
        })
        .collect();
    TrainedTopology {
        topology: Topology::Cascade,
        dim: 1,
        models,
        plan: Some(plan.clone()),
        ranks: vec![],
    }
}

#[test]
fn perfect_node_classifiers_recover_every_truth() {
    for (csv, sentinels) in [(FIG2, 0), (crate::taxonomy::FIXTURE_CSV, 2)] {
        let t = parse_taxonomy_str(csv).unwrap();
        let plan = build_cascade_plan(&t, &TruthCensus::from_taxonomy(&t));
        assert_eq!(plan.sentinel_nodes().len(), sentinels);
        let views = Features::from_rows(&[[0.0]]).unwrap();
        for i in 0..t.labels().len() {
            let truth = t.label_path(i).unwrap();
            let topo = perfect_cascade(&plan, &truth);
            for rule in [AggregationRule::MajorityVote, AggregationRule::AverageScore] {
                let got = predict_specimen_cascade(&t, &topo, &plan, &views, rule).unwrap();
                assert_eq!(got, truth);
            }
        }
    }
}

#[test]
fn sentinel_stops_at_genus() {
    let t = fixture();
    let plan = build_cascade_plan(&t, &TruthCensus::from_taxonomy(&t));
    let genus = t
        .expand_bottom_up(t.label_by_name("Leuctra sp.").unwrap().node)
        .unwrap();
    let topo = perfect_cascade(&plan, &genus);
    let views = Features::from_rows(&[[0.0], [1.0]]).unwrap();
    let got = predict_specimen_cascade(&t, &topo, &plan, &views, AggregationRule::MajorityVote).unwrap();
    assert_eq!(got.depth(), 3);
    assert_eq!(t.name(got.last()), "Leuctra");
}

#[test]
fn wrong_order_propagates() {
    let t = fixture();
    let plan = build_cascade_plan(&t, &TruthCensus::from_taxonomy(&t));
    let truth = t.label_path(0).unwrap();
    let mut topo = perfect_cascade(&plan, &truth);
    let other = t.top_level().iter().copied().find(|o| *o != truth.nodes()[0]).unwrap();
    topo.models[0] = constant("root", class_of_node(other));
    let views = Features::from_rows(&[[0.0]]).unwrap();
    let got = predict_specimen_cascade(&t, &topo, &plan, &views, AggregationRule::MajorityVote).unwrap();
    assert_eq!(got.nodes()[0], other);
    for r in 1..=truth.depth() {
        assert_ne!(got.ancestor_at_rank(r), truth.ancestor_at_rank(r));
    }
}

#[test]
fn per_level_incoherence_is_flagged() {
    let t = parse_taxonomy_str(TWO_ORDERS).unwrap();
    let oa = t.unique_at_rank(1, "Oa").unwrap();
    let fc = t.unique_at_rank(2, "Fc").unwrap();
    let topo = TrainedTopology {
        topology: Topology::PerLevel,
        dim: 1,
        models: vec![constant("rank-1", oa.0), constant("rank-2", fc.0)],
        plan: None,
        ranks: vec![1, 2],
    };
    let views = Features::from_rows(&[[0.0]]).unwrap();
    let p = predict_specimen(&t, &topo, "s", &views, AggregationRule::MajorityVote).unwrap();
    assert!(!p.coherent);
    assert_eq!(p.ranks, vec![Some(oa), Some(fc), None, None]);
    let text = write_predictions(&t, &[p], &BTreeMap::from([("topology".into(), "per-level".into())]));
    let back = read_predictions(text.as_bytes(), &t).unwrap();
    assert!(back.per_rank());
    assert!(!back.rows[0].coherent);
    let truths = HashMap::from([("s".to_string(), path(&t, "Ob/Fc/Gd"))]);
    let report = evaluate_file(&back, &truths, &t, PrefixMode::PartialCredit).unwrap();
    assert!(report.deepest.is_none());
    assert_eq!(report.incoherent, 1);
    assert_eq!(report.ce_per_rank[&1].errors, 1);
    assert_eq!(report.ce_per_rank[&2].errors, 0);
}

#[test]
fn one_hot_scores_expand_bottom_up() {
    let t = parse_taxonomy_str(FIG2).unwrap();
    let k = t.labels().len();
    let one_hot = |label: &str| {
        let idx = t.label_index_by_name(label).unwrap();
        (0..k).map(|i| if i == idx { 1.0 } else { 0.0 }).collect::<Vec<f64>>()
    };
    let table = ScoreTable {
        classes: k,
        specimens: vec![
            ScoredSpecimen {
                id: "a".into(),
                label: None,
                views: vec![
                    View {
                        image_id: "1".into(),
                        values: one_hot("SpA"),
                    },
                    View {
                        image_id: "2".into(),
                        values: one_hot("SpA"),
                    },
                ],
            },
            ScoredSpecimen {
                id: "b".into(),
                label: None,
                views: vec![View {
                    image_id: "1".into(),
                    values: one_hot("FamA"),
                }],
            },
        ],
    };
    let preds = predict_from_scores(&t, &table, AggregationRule::AverageScore).unwrap();
    assert_eq!(preds[0].path, Some(path(&t, "OrdA/FamB/GenA/SpA")));
    assert_eq!(preds[1].path.as_ref().unwrap().depth(), 2);
}

#[test]
fn prediction_csv_round_trip() {
    let t = fixture();
    let rows: Vec<SpecimenPrediction> = (0..t.labels().len())
        .map(|i| SpecimenPrediction::from_path(&format!("s{i}"), t.label_path(i), t.levels()))
        .chain(std::iter::once(SpecimenPrediction::from_path("none", None, t.levels())))
        .collect();
    let meta = BTreeMap::from([("manifest".to_string(), "sha256:abc".to_string())]);
    let text = write_predictions(&t, &rows, &meta);
    assert!(text.starts_with("# manifest=sha256:abc\nspecimen_id,rank1,rank2,rank3,rank4\n"));
    let back = read_predictions(text.as_bytes(), &t).unwrap();
    assert_eq!(back.rows, rows);
    assert_eq!(back.manifest(), Some("sha256:abc"));
    assert_eq!(write_predictions(&t, &back.rows, &back.meta), text);

    let bad = "specimen_id,rank1,rank2,rank3,rank4\nx,Nowhere,,,\n";
    assert!(matches!(
        read_predictions(bad.as_bytes(), &t),
        Err(HierarchyError::Format { line: 2, .. })
    ));
    let short = "specimen_id,rank1\nx,Diptera\n";
    assert!(read_predictions(short.as_bytes(), &t).is_err());
}

fn synthetic(t: &Taxonomy, per_label: usize, seed: u64) -> (crate::dataset::Dataset, DataSplit) {
    let spec = SyntheticSpec {
        dim: 6,
        per_label,
        views_per_specimen: 3,
        seed,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(t, &spec).unwrap();
    let mut split_spec = SplitSpec::new(Scheme::MachineLearning, seed);
    split_spec.n_splits = 1;
    let split = make_splits(&data, t, &split_spec).unwrap().remove(0);
    (data, split)
}

#[test]
fn topologies_end_to_end() {
    let t = parse_taxonomy_str(TWO_ORDERS).unwrap();
    let (data, split) = synthetic(&t, 20, 5);
    let mut config = TrainConfig::svm(5);
    config.learner = LearnerSpec::Svm {
        grid: Some(GridSpec {
            c: vec![1.0, 8.0],
            gamma: vec![0.05, 0.2],
            phase: crate::learners::GridPhase::Single,
        }),
    };
    let flat = train_flat(&t, &data, &split, &config).unwrap();
    let cascade = train_topology(Topology::Cascade, &t, &data, &split, &config, &[]).unwrap();
    let levels = train_per_level(&t, &data, &split, &config, &[1, 2]).unwrap();
    assert_eq!(flat.models.len(), 1);
    assert_eq!(flat.models[0].model.classes().len(), t.labels().len());
    assert_eq!(cascade.models.len(), cascade.plan.as_ref().unwrap().len());
    assert_eq!(levels.models.len(), 2);
    assert!(matches!(
        train_per_level(&t, &data, &split, &config, &[0]),
        Err(HierarchyError::InvalidRanks(_))
    ));

    let truth: HashMap<&str, LabelPath> = data
        .specimens()
        .iter()
        .map(|s| (s.id.as_str(), s.truth.clone()))
        .collect();
    let rule = AggregationRule::MajorityVote;
    let pf = predict_split(&t, &flat, &data, &split, rule).unwrap();
    let pc = predict_split(&t, &cascade, &data, &split, rule).unwrap();
    let pl = predict_split(&t, &levels, &data, &split, rule).unwrap();
    assert_eq!(pf.len(), split.test.len());
    for ((f, c), l) in pf.iter().zip(&pc).zip(&pl) {
        // the flat model never emits a node that is not a class label
        assert!(t.is_label(f.path.as_ref().unwrap().last()));
        assert!(c.coherent);
        assert_eq!(c.ranks[0], l.ranks[0], "cascade root and rank-1 model must agree");
    }
    for preds in [&pf, &pc] {
        let records: Vec<_> = preds
            .iter()
            .map(|p| p.record(truth[p.specimen_id.as_str()].clone()))
            .collect();
        let report = evaluate(&records, &t, PrefixMode::PartialCredit).unwrap();
        assert!(report.ce_deepest().unwrap() <= 0.05, "{:?}", report.deepest);
    }

    let bundle = ModelBundle::new(&t, config.clone(), cascade.clone());
    let back = ModelBundle::from_json(bundle.to_json().as_bytes()).unwrap();
    assert_eq!(back, bundle);
    back.check_taxonomy(&t).unwrap();
    assert!(back.check_taxonomy(&fixture()).is_err());
    assert_eq!(predict_split(&t, &back.trained, &data, &split, rule).unwrap(), pc);

    let mut softmax = config.clone();
    softmax.learner = LearnerSpec::Softmax {
        hyper: crate::learners::SoftmaxHyper::default(),
    };
    let sm = train_flat(&t, &data, &split, &softmax).unwrap();
    assert!(predict_split(&t, &sm, &data, &split, AggregationRule::AverageScore).is_ok());
    assert_eq!(
        predict_split(&t, &flat, &data, &split, AggregationRule::AverageScore).unwrap_err(),
        HierarchyError::RuleUnsupported(AggregationRule::AverageScore)
    );
}

#[test]
fn empty_child_class_is_dropped() {
    let t = parse_taxonomy_str(TWO_ORDERS).unwrap();
    let (data, mut split) = synthetic(&t, 12, 8);
    let gb = t.label_index_by_name("Gb").unwrap();
    let drop = |ids: &mut Vec<String>| ids.retain(|id| data.get(id).unwrap().label != gb);
    drop(&mut split.train);
    drop(&mut split.val);
    let mut config = TrainConfig::svm(1);
    config.learner = LearnerSpec::Svm {
        grid: Some(GridSpec::single(4.0, 0.1)),
    };
    config.preprocess = PreprocessConfig::default();
    let cascade = train_topology(Topology::Cascade, &t, &data, &split, &config, &[]).unwrap();
    assert_eq!(cascade.dropped_classes(), 1);
    let gb_node = class_of_node(t.labels()[gb].node);
    let fa = cascade
        .models
        .iter()
        .find(|m| m.report.candidates.contains(&gb_node))
        .unwrap();
    assert_eq!(fa.report.dropped, vec![gb_node]);
    // the node falls back to a constant classifier over the one remaining child
    assert!(matches!(fa.model, NodeModel::Constant { .. }));
}
