#![no_main]

use libfuzzer_sys::fuzz_target;
use trajcql::synthgen::decode_crop_archive;

fuzz_target!(|data: &[u8]| {
    if let Ok(archive) = decode_crop_archive(data) {
        let bytes = archive.encode();
        assert_eq!(decode_crop_archive(&bytes).expect("re-encoded archive decodes").encode(), bytes);
    }
});
