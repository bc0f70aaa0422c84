#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = hierclass::config::Config::parse(text) {
            let _ = hierclass::config::resolve_seed(None, None, &config);
            let _ = config.get_list::<f64>("svm.c");
        }
    }
});
