#![no_main]

use hierclass::hierarchy::{predict_specimen, AggregationRule, ModelBundle};
use hierclass::learners::Features;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(bundle) = ModelBundle::from_json(data) else {
        return;
    };
    let taxonomy = hierclass::taxonomy::fixture();
    if bundle.check_taxonomy(&taxonomy).is_ok() {
        let dim = bundle.trained.dim;
        let views = Features::from_vec(1, dim, vec![0.0; dim]);
        let _ = predict_specimen(&taxonomy, &bundle.trained, "x", &views, AggregationRule::MajorityVote);
    }
});
