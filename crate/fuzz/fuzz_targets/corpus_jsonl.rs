#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(trajs) = trajcql::geom::parse_corpus(text) {
            for t in &trajs {
                assert_eq!(t.dense.len() as i64, t.last_frame() - t.first_frame() + 1);
            }
        }
    }
});
