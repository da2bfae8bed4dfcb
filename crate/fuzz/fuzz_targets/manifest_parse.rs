#![no_main]

use libfuzzer_sys::fuzz_target;
use rattle::synth::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(manifest) = DatasetManifest::from_json(text) {
            for e in &manifest.entries {
                assert!(!e.path.starts_with('/') && !e.path.split('/').any(|c| c == ".."));
            }
            DatasetManifest::from_json(&manifest.to_json()).expect("round trip");
        }
    }
});
