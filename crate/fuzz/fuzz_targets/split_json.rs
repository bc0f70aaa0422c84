#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(split) = hierclass::dataset::DataSplit::from_json(data) {
        let again = hierclass::dataset::DataSplit::from_json(split.to_json().as_bytes()).unwrap();
        assert_eq!(again, split);
    }
});
