#![no_main]

use hierclass::hierarchy::read_predictions;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let taxonomy = hierclass::taxonomy::fixture();
    if let Ok(file) = read_predictions(data, &taxonomy) {
        for row in &file.rows {
            assert_eq!(row.ranks.len(), taxonomy.levels());
            assert!(row.path.is_none() || row.coherent);
        }
    }
    let _ = hierclass::hierarchy::read_truths(data, &taxonomy);
});
