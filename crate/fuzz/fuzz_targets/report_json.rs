#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(report) = hierclass::report::Report::from_json(data) {
        let _ = report.to_text();
    }
});
