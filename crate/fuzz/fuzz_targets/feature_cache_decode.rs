#![no_main]

use libfuzzer_sys::fuzz_target;
use rattle::features::FeatureCache;

fuzz_target!(|data: &[u8]| {
    if let Ok(cache) = FeatureCache::decode(data, 0.015) {
        assert!(cache.sequences.iter().all(|s| s.n_coeffs() == cache.width));
        assert_eq!(FeatureCache::decode(&cache.encode(), 0.015).expect("round trip").sequences, cache.sequences);
    }
});
