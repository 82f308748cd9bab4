#![no_main]
use libfuzzer_sys::fuzz_target;
use noisecar::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = checkpoint::decode(data) {
        let again = checkpoint::decode(checkpoint::encode(&net).as_bytes()).expect("encoded checkpoint decodes");
        assert_eq!(again, net);
    }
});
