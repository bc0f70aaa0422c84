#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = hierclass::taxonomy::parse_taxonomy(data) {
        // whatever parses must survive stats and a digest
        let _ = t.stats();
        let _ = t.digest();
        for i in 0..t.labels().len() {
            let path = t.label_path(i).expect("label index in range");
            assert!(path.depth() >= 1 && path.depth() <= t.levels());
        }
    }
});
