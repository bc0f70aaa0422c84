//! Every parser entry point rejects garbage with an error, never a panic,
//! and accepts the checked-in fuzz seeds.

use std::path::PathBuf;

use hierclass::config::Config;
use hierclass::dataset::{ingest_features, ingest_scores, DataSplit};
use hierclass::hierarchy::{predict_specimen, read_predictions, read_truths, AggregationRule, ModelBundle};
use hierclass::learners::Features;
use hierclass::report::Report;
use hierclass::taxonomy::{fixture, parse_taxonomy, parse_taxonomy_str, Taxonomy, FIXTURE_CSV};
use proptest::prelude::*;

fn small() -> Taxonomy {
    parse_taxonomy_str(
        "taxa,species,genus,family,order\nSpA,SpA,GenA,FamA,OrdA\nSpB,SpB,GenA,FamA,OrdA\nFamB,-,-,FamB,OrdA\n",
    )
    .unwrap()
}

fn all_parsers(data: &[u8], fix: &Taxonomy, small: &Taxonomy) {
    let _ = parse_taxonomy(data);
    let _ = ingest_features(data, fix);
    let _ = ingest_scores(data, small);
    let _ = read_predictions(data, fix);
    let _ = read_truths(data, fix);
    let _ = DataSplit::from_json(data);
    if let Ok(bundle) = ModelBundle::from_json(data) {
        predict_zeros(&bundle, fix);
    }
    if let Ok(r) = Report::from_json(data) {
        let _ = r.to_text();
    }
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Config::parse(text);
    }
}

/// A bundle that loads must predict without panicking.
fn predict_zeros(bundle: &ModelBundle, fix: &Taxonomy) {
    if bundle.check_taxonomy(fix).is_ok() {
        let views = Features::from_vec(2, bundle.trained.dim, vec![0.0; 2 * bundle.trained.dim]);
        for rule in [AggregationRule::AverageScore, AggregationRule::MajorityVote] {
            let _ = predict_specimen(fix, &bundle.trained, "x", &views, rule);
        }
    }
}

/// A valid input with one byte replaced or removed.
fn mutate(base: &[u8], at: usize, byte: u8, delete: bool) -> Vec<u8> {
    let mut v = base.to_vec();
    if v.is_empty() {
        return v;
    }
    let i = at % v.len();
    if delete {
        v.remove(i);
    } else {
        v[i] = byte;
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arbitrary_bytes(data in proptest::collection::vec(any::<u8>(), 0..512)) {
        all_parsers(&data, &fixture(), &small());
    }

    #[test]
    fn csv_like_text(rows in proptest::collection::vec("[a-zA-Z0-9 .,#=-]{0,40}", 0..12)) {
        let text = rows.join("\n");
        all_parsers(text.as_bytes(), &fixture(), &small());
    }

    #[test]
    fn mutated_fixture(at in 0usize..4000, byte in any::<u8>(), delete in any::<bool>()) {
        let data = mutate(FIXTURE_CSV.as_bytes(), at, byte, delete);
        if let Ok(t) = parse_taxonomy(data.as_slice()) {
            prop_assert!(t.labels().len() <= 39 + 1);
        }
    }
}

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn fuzz_seeds_parse() {
    let fix = fixture();
    let small = small();
    for (p, b) in corpus("taxonomy_csv") {
        parse_taxonomy(b.as_slice()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in corpus("feature_csv") {
        ingest_features(b.as_slice(), &fix).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in corpus("score_csv") {
        ingest_scores(b.as_slice(), &small).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in corpus("prediction_csv") {
        read_predictions(b.as_slice(), &fix).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in corpus("split_json") {
        DataSplit::from_json(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in corpus("config_kv") {
        Config::parse(std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in corpus("model_bundle") {
        let bundle = ModelBundle::from_json(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        predict_zeros(&bundle, &fix);
    }
    for (p, b) in corpus("report_json") {
        Report::from_json(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn seed_mutations_do_not_panic() {
    let fix = fixture();
    let small = small();
    let targets = [
        "taxonomy_csv",
        "feature_csv",
        "score_csv",
        "prediction_csv",
        "split_json",
        "config_kv",
        "model_bundle",
        "report_json",
    ];
    for target in targets {
        for (_, bytes) in corpus(target) {
            for at in (0..bytes.len()).step_by(bytes.len() / 64 + 1) {
                for byte in [b',', b'\n', b'"', b'-', b'9', 0xff] {
                    all_parsers(&mutate(&bytes, at, byte, false), &fix, &small);
                }
                all_parsers(&mutate(&bytes, at, 0, true), &fix, &small);
            }
        }
    }
}

fn edit_bundle(edit: impl Fn(&mut serde_json::Value)) -> Result<ModelBundle, String> {
    let (_, bytes) = corpus("model_bundle")
        .into_iter()
        .find(|(p, _)| p.ends_with("cascade_svm.json"))
        .expect("cascade seed");
    let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    edit(&mut v);
    ModelBundle::from_json(&serde_json::to_vec(&v).unwrap()).map_err(|e| e.to_string())
}

#[test]
fn inconsistent_bundles_are_rejected_on_load() {
    assert!(edit_bundle(|_| ()).is_ok());

    let err = edit_bundle(|v| {
        for m in v["trained"]["models"].as_array_mut().unwrap() {
            if let Some(pairs) = find_key(&mut m["model"], "pairs") {
                pairs[0]["support"][0] = serde_json::json!(100000);
            }
        }
    })
    .unwrap_err();
    assert!(err.contains("support index"), "{err}");

    let err = edit_bundle(|v| {
        for m in v["trained"]["models"].as_array_mut().unwrap() {
            if let Some(pairs) = find_key(&mut m["model"], "pairs") {
                pairs[0]["second"] = serde_json::json!(99);
            }
        }
    })
    .unwrap_err();
    assert!(err.contains("pair"), "{err}");

    let err = edit_bundle(|v| {
        for m in v["trained"]["models"].as_array_mut().unwrap() {
            if let Some(classes) = find_key(&mut m["model"], "classes") {
                *classes = serde_json::json!([]);
            }
        }
    })
    .unwrap_err();
    assert!(err.contains("classes"), "{err}");
}

fn find_key<'a>(v: &'a mut serde_json::Value, key: &str) -> Option<&'a mut serde_json::Value> {
    match v {
        serde_json::Value::Object(map) => {
            if map.contains_key(key) {
                return map.get_mut(key);
            }
            map.values_mut().find_map(|c| find_key(c, key))
        }
        _ => None,
    }
}
