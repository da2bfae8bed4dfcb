//! Batch feature extraction and the on-disk feature cache.
//!
//! Cache layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "RATLFEAT"
//! version    u32      FEATURE_CACHE_VERSION
//! width      u32      coefficients per frame
//! digest     32 bytes SHA-256 identifying the extraction settings and source
//! n_entries  u32
//! entries    n_entries × (n_frames u32, n_frames·width × f64)
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{AudioClip, ChannelPolicy};
use crate::mfcc::{MfccConfig, MfccError, MfccExtractor, MfccSequence};

pub const FEATURE_CACHE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RATLFEAT";
const MAX_FRAMES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Mfcc(#[from] MfccError),
    #[error("corrupt feature cache: {0}")]
    Corrupt(String),
    #[error("feature cache was built for different settings")]
    Stale,
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Identifies a feature set: extraction settings, channel policy and an
/// opaque description of the audio source.
pub fn feature_digest(config: &MfccConfig, policy: ChannelPolicy, source: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(config.digest().as_bytes());
    h.update(serde_json::to_vec(&policy).expect("policy serializes"));
    h.update(source.as_bytes());
    h.finalize().into()
}

pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// MFCC sequences for every clip, in order. All clips must share a rate.
pub fn extract_features(
    clips: &[AudioClip],
    config: &MfccConfig,
    policy: ChannelPolicy,
) -> Result<Vec<MfccSequence>, MfccError> {
    let Some(first) = clips.first() else {
        return Ok(Vec::new());
    };
    let extractor = MfccExtractor::new(config, first.sample_rate())?;
    clips
        .par_iter()
        .map(|clip| {
            if clip.sample_rate() != extractor.rate() {
                return Err(MfccError::InvalidConfig(format!(
                    "clip rate {} differs from {}",
                    clip.sample_rate(),
                    extractor.rate()
                )));
            }
            extractor.compute_clip(clip, policy)
        })
        .collect()
}

/// Keeps the first `n` coefficients of every frame. Because the cepstrum
/// is a DCT, this equals extraction with `n_coeffs = n`.
pub fn truncate_coeffs(seq: &MfccSequence, n: usize) -> Result<MfccSequence, MfccError> {
    let width = seq.n_coeffs();
    if n == 0 || n > width {
        return Err(MfccError::InvalidConfig(format!("cannot keep {n} of {width} coefficients")));
    }
    let data = seq.frames().flat_map(|f| f[..n].iter().copied()).collect();
    MfccSequence::new(n, data, seq.frame_times().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub digest: [u8; 32],
    pub width: usize,
    pub sequences: Vec<MfccSequence>,
}

impl FeatureCache {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FEATURE_CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.sequences.len() as u32).to_le_bytes());
        for seq in &self.sequences {
            out.extend_from_slice(&(seq.n_frames() as u32).to_le_bytes());
            for v in seq.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Frame times are not stored; they are rebuilt from `step_secs`.
    pub fn decode(bytes: &[u8], step_secs: f64) -> Result<Self, FeatureError> {
        let corrupt = |m: &str| FeatureError::Corrupt(m.to_string());
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], FeatureError> {
            let end =
                at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("unexpected end of data"))?;
            let s = &bytes[at..end];
            at = end;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
        let version = u32_at(take(4)?);
        if version != FEATURE_CACHE_VERSION as usize {
            return Err(FeatureError::Corrupt(format!("unsupported version {version}")));
        }
        let width = u32_at(take(4)?);
        if width == 0 {
            return Err(corrupt("zero width"));
        }
        let digest: [u8; 32] = take(32)?.try_into().expect("32 bytes");
        let n_entries = u32_at(take(4)?);
        let mut sequences = Vec::with_capacity(n_entries.min(1 << 16));
        for _ in 0..n_entries {
            let frames = u32_at(take(4)?);
            if frames == 0 || frames > MAX_FRAMES {
                return Err(corrupt("frame count out of range"));
            }
            let len =
                frames.checked_mul(width).and_then(|n| n.checked_mul(8)).ok_or_else(|| corrupt("entry too large"))?;
            let data: Vec<f64> =
                take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(corrupt("non-finite coefficient"));
            }
            let times = (0..frames).map(|i| i as f64 * step_secs).collect();
            sequences.push(MfccSequence::new(width, data, times).map_err(|e| FeatureError::Corrupt(e.to_string()))?);
        }
        if at != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { digest, width, sequences })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|source| FeatureError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>, step_secs: f64) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| FeatureError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes, step_secs)
    }
}

/// Loads features from `path` when its digest matches, otherwise extracts
/// them and rewrites the cache.
pub fn cached_features(
    path: impl AsRef<Path>,
    clips: &[AudioClip],
    config: &MfccConfig,
    policy: ChannelPolicy,
    source: &str,
) -> Result<Vec<MfccSequence>, FeatureError> {
    let path = path.as_ref();
    let digest = feature_digest(config, policy, source);
    let step = config.step_ms / 1000.0;
    if path.exists() {
        match FeatureCache::load(path, step) {
            Ok(cache) if cache.digest == digest && cache.sequences.len() == clips.len() => return Ok(cache.sequences),
            Ok(_) | Err(FeatureError::Corrupt(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let sequences = extract_features(clips, config, policy)?;
    let width = sequences.first().map_or(config.n_coeffs, MfccSequence::n_coeffs);
    FeatureCache { digest, width, sequences }.save(path)?;
    let cache = FeatureCache::load(path, step)?;
    Ok(cache.sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfcc::compute_mfcc;

    fn clips() -> Vec<AudioClip> {
        (0..3)
            .map(|k| {
                let s = (0..6000).map(|i| ((i * (k + 3)) as f64 * 0.01).sin()).collect();
                AudioClip::mono(s, 48_000).unwrap()
            })
            .collect()
    }

    #[test]
    fn truncation_equals_direct_extraction() {
        let c = clips();
        let wide = compute_mfcc(&c[0], &MfccConfig::regression()).unwrap();
        let narrow = compute_mfcc(&c[0], &MfccConfig::classification()).unwrap();
        let cut = truncate_coeffs(&wide, 21).unwrap();
        for (a, b) in cut.as_slice().iter().zip(narrow.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(truncate_coeffs(&wide, 28).is_err());
    }

    #[test]
    fn cache_round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let cfg = MfccConfig::classification();
        let a = cached_features(&path, &clips(), &cfg, ChannelPolicy::Mix, "set-a").unwrap();
        let direct = extract_features(&clips(), &cfg, ChannelPolicy::Mix).unwrap();
        assert_eq!(a, direct);
        let cache = FeatureCache::load(&path, 0.015).unwrap();
        assert_eq!(cache.digest, feature_digest(&cfg, ChannelPolicy::Mix, "set-a"));
        // A different source rebuilds rather than reusing.
        cached_features(&path, &clips(), &cfg, ChannelPolicy::Mix, "set-b").unwrap();
        let cache = FeatureCache::load(&path, 0.015).unwrap();
        assert_eq!(cache.digest, feature_digest(&cfg, ChannelPolicy::Mix, "set-b"));
    }

    #[test]
    fn decode_rejects_damage() {
        let cfg = MfccConfig::classification();
        let seqs = extract_features(&clips(), &cfg, ChannelPolicy::Mix).unwrap();
        let bytes = FeatureCache { digest: [7; 32], width: 21, sequences: seqs }.encode();
        assert!(FeatureCache::decode(&bytes, 0.015).is_ok());
        for cut in [0, 7, 20, 60, bytes.len() - 1] {
            assert!(FeatureCache::decode(&bytes[..cut], 0.015).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(FeatureCache::decode(&extra, 0.015).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(FeatureCache::decode(&bad, 0.015).is_err());
    }
}
