//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "RATLCKPT"
//! version    u32       CHECKPOINT_VERSION
//! meta_len   u32       byte length of the JSON metadata
//! meta       JSON      {"spec", "input_width", "n_params", "feature_digest",
//!                       "has_input_scaler", "has_target_scale"}
//! params     n_params × f64
//! scaler     2·input_width × f64 (means, then stds), if has_input_scaler
//! target     2 × f64 (mean, std), if has_target_scale
//! checksum   32 bytes  SHA-256 of everything above
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a load reproduces the saved
//! model exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{NetworkModel, Standardizer, TargetScale};
use super::spec::LayerSpec;
use super::NnError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RATLCKPT";
const MAX_META: usize = 1 << 20;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    spec: Vec<LayerSpec>,
    input_width: usize,
    n_params: usize,
    feature_digest: Option<String>,
    has_input_scaler: bool,
    has_target_scale: bool,
}

pub fn encode_checkpoint(model: &NetworkModel) -> Vec<u8> {
    let meta = Meta {
        spec: model.spec().to_vec(),
        input_width: model.input_width(),
        n_params: model.n_params(),
        feature_digest: model.feature_digest().map(str::to_owned),
        has_input_scaler: model.input_scaler().is_some(),
        has_target_scale: model.target_scale().is_some(),
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(16 + meta.len() + 8 * model.n_params() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    model.params().iter().copied().for_each(&mut put);
    if let Some(s) = model.input_scaler() {
        s.mean.iter().chain(&s.std).copied().for_each(&mut put);
    }
    if let Some(t) = model.target_scale() {
        put(t.mean);
        put(t.std);
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::CorruptCheckpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("unexpected end of data"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let len = n.checked_mul(8).ok_or_else(|| corrupt("array length overflows"))?;
        Ok(self.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkModel, NnError> {
    if bytes.len() < MAGIC.len() + 8 + 32 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(NnError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader { bytes: body, at: 12 };
    let meta_len = r.u32()? as usize;
    if meta_len > MAX_META {
        return Err(corrupt("metadata too large"));
    }
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| corrupt(format!("metadata: {e}")))?;
    let mut model =
        NetworkModel::zeros(&meta.spec, meta.input_width).map_err(|e| corrupt(format!("layer spec: {e}")))?;
    if model.n_params() != meta.n_params {
        return Err(corrupt(format!("spec implies {} parameters, header says {}", model.n_params(), meta.n_params)));
    }
    let params = r.f64s(meta.n_params)?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(corrupt("non-finite parameter"));
    }
    model.set_params(params)?;
    if meta.has_input_scaler {
        let mean = r.f64s(meta.input_width)?;
        let std = r.f64s(meta.input_width)?;
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(corrupt("invalid input standardizer"));
        }
        model.set_input_scaler(Some(Standardizer { mean, std }))?;
    }
    if meta.has_target_scale {
        let t = r.f64s(2)?;
        if !(t[0].is_finite() && t[1].is_finite() && t[1] > 0.0) {
            return Err(corrupt("invalid target scale"));
        }
        model.set_target_scale(Some(TargetScale { mean: t[0], std: t[1] }));
    }
    if r.at != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    model.set_feature_digest(meta.feature_digest);
    Ok(model)
}

pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|source| NnError::Io { path: path.display().to_string(), source })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel, NnError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NnError::Io { path: path.display().to_string(), source })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfcc::MfccSequence;
    use crate::nn::{init_model, CellKind};

    fn sample_model() -> NetworkModel {
        let mut m = init_model(&LayerSpec::regressor(CellKind::Lstm, 5, 3), 4, 17).unwrap();
        m.set_input_scaler(Some(Standardizer { mean: vec![0.1, -2.0, 3.5, 0.0], std: vec![1.0, 0.5, 2.0, 3.0] }))
            .unwrap();
        m.set_target_scale(Some(TargetScale { mean: 13.94, std: 12.1 }));
        m.set_feature_digest(Some("abc123".into()));
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        for m in [sample_model(), init_model(&LayerSpec::classifier(CellKind::Gru, 6, 2, 10), 21, 3).unwrap()] {
            save_model(&m, &path).unwrap();
            assert_eq!(load_model(&path).unwrap(), m);
        }
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = encode_checkpoint(&sample_model());
        for cut in [0, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(NnError::CorruptCheckpoint(_))));
        }
    }

    #[test]
    fn flipped_bit_is_corrupt() {
        let mut bytes = encode_checkpoint(&sample_model());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_checkpoint(&bytes), Err(NnError::CorruptCheckpoint(_))));
    }

    #[test]
    fn other_version_rejected() {
        let mut bytes = encode_checkpoint(&sample_model());
        bytes[8] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(NnError::VersionMismatch { found: 9, expected: 1 })));
    }

    #[test]
    fn wrong_width_caught_at_forward() {
        let m = decode_checkpoint(&encode_checkpoint(&sample_model())).unwrap();
        let x = MfccSequence::from_rows(&[vec![0.0; 27]]).unwrap();
        assert!(matches!(m.forward(&x), Err(NnError::ShapeMismatch(_))));
    }
}
