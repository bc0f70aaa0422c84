#![no_main]

use hierclass::hierarchy::{predict_from_scores, AggregationRule};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let taxonomy = hierclass::taxonomy::parse_taxonomy_str(
        "taxa,species,genus,family,order\nSpA,SpA,GenA,FamA,OrdA\nSpB,SpB,GenA,FamA,OrdA\nFamB,-,-,FamB,OrdA\n",
    )
    .unwrap();
    if let Ok(table) = hierclass::dataset::ingest_scores(data, &taxonomy) {
        let _ = predict_from_scores(&taxonomy, &table, AggregationRule::AverageScore);
        let _ = predict_from_scores(&taxonomy, &table, AggregationRule::MajorityVote);
    }
});
