#![no_main]

use libfuzzer_sys::fuzz_target;
use rattle::wav::{decode_wav, encode_wav};

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = decode_wav(data) {
        assert!(clip.channels().iter().flatten().all(|v| v.is_finite()));
        // Anything that decodes must survive a re-encode.
        let again = decode_wav(&encode_wav(&clip)).expect("re-encoded clip decodes");
        assert_eq!(again.len(), clip.len());
        assert_eq!(again.n_channels(), clip.n_channels());
    }
});
