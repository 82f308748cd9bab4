#![no_main]
use libfuzzer_sys::fuzz_target;
use noisecar::data::idx;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = idx::decode_labels(data) {
        assert_eq!(idx::encode_labels(&labels), data);
    }
});
