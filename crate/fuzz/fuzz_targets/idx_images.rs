#![no_main]
use libfuzzer_sys::fuzz_target;
use noisecar::data::idx;

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = idx::decode_images(data) {
        assert_eq!(images.pixels.len(), images.count * images.pixels_per_image());
        assert_eq!(idx::encode_images(&images), data);
    }
});
