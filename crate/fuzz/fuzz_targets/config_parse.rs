#![no_main]

use libfuzzer_sys::fuzz_target;
use rattle_cli::config::{overlay, RunConfig};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let base = RunConfig::desk_scale();
        if let Ok(cfg) = overlay(&base, text) {
            let echo = cfg.to_toml();
            assert_eq!(overlay(&base, &echo).expect("echo parses").to_toml(), echo);
        }
    }
});
