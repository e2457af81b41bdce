#![no_main]

use libfuzzer_sys::fuzz_target;
use trajcql::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::parse(text) {
            // the canonical text of a parsed config parses back to the same config
            let again = RunConfig::parse(&cfg.to_text()).expect("canonical text parses");
            assert_eq!(again, cfg);
        }
    }
});
