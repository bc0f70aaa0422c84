#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let taxonomy = hierclass::taxonomy::fixture();
    if let Ok(d) = hierclass::dataset::ingest_features(data, &taxonomy) {
        assert!(d.specimens().iter().all(|s| !s.views.is_empty()));
        let _ = d.digest();
    }
});
