#![no_main]
use libfuzzer_sys::fuzz_target;
use noisecar::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let echoed = serde_json::to_string(&cfg).expect("config serializes");
        assert_eq!(RunConfig::from_json(&echoed).expect("echo parses"), cfg);
    }
});
