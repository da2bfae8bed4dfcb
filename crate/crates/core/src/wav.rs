//! RIFF/WAVE codec. Reads 16-bit integer PCM and 32-bit IEEE float PCM,
//! mono or stereo; always writes 16-bit PCM.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::audio::AudioClip;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn malformed(msg: impl Into<String>) -> WavError {
    WavError::MalformedWav(msg.into())
}

#[derive(Debug, Clone, Copy)]
struct Format {
    encoding: Encoding,
    channels: u16,
    sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Pcm16,
    Float32,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Format, WavError> {
    if body.len() < 16 {
        return Err(malformed(format!("fmt chunk is {} bytes, need 16", body.len())));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let block_align = u16_at(body, 12);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(malformed("extensible fmt chunk truncated"));
        }
        // First two bytes of the sub-format GUID carry the plain format tag.
        tag = u16_at(body, 24);
    }
    let encoding = match (tag, bits) {
        (FORMAT_PCM, 16) => Encoding::Pcm16,
        (FORMAT_IEEE_FLOAT, 32) => Encoding::Float32,
        (t, b) => return Err(WavError::UnsupportedEncoding(format!("format tag {t:#06x} with {b} bits per sample"))),
    };
    if !(1..=2).contains(&channels) {
        return Err(WavError::UnsupportedEncoding(format!("{channels} channels")));
    }
    if sample_rate == 0 {
        return Err(malformed("sample rate is zero"));
    }
    let expected_align = channels * bits / 8;
    if block_align != expected_align {
        return Err(malformed(format!("block align {block_align}, expected {expected_align}")));
    }
    Ok(Format { encoding, channels, sample_rate })
}

/// Decodes a complete WAV file image.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 {
        return Err(malformed("shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing WAVE tag"));
    }

    let mut format = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let start = at + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| malformed(format!("chunk {:?} overruns the file", String::from_utf8_lossy(id))))?;
        match id {
            b"fmt " => format = Some(parse_fmt(&bytes[start..end])?),
            b"data" => data = Some(&bytes[start..end]),
            _ => {}
        }
        // Chunks are word aligned.
        at = end + (size & 1);
    }

    let format = format.ok_or_else(|| malformed("no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("no data chunk"))?;
    let width = match format.encoding {
        Encoding::Pcm16 => 2,
        Encoding::Float32 => 4,
    };
    let n_ch = usize::from(format.channels);
    let frame = width * n_ch;
    if data.len() % frame != 0 {
        return Err(malformed(format!(
            "data chunk of {} bytes is not a whole number of {frame}-byte frames",
            data.len()
        )));
    }
    let n_frames = data.len() / frame;
    let mut channels = vec![Vec::with_capacity(n_frames); n_ch];
    for f in data.chunks_exact(frame) {
        for (c, s) in f.chunks_exact(width).enumerate() {
            let v = match format.encoding {
                Encoding::Pcm16 => f64::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0,
                Encoding::Float32 => {
                    let x = f32::from_le_bytes([s[0], s[1], s[2], s[3]]);
                    if !x.is_finite() {
                        return Err(malformed("non-finite float sample"));
                    }
                    f64::from(x)
                }
            };
            channels[c].push(v);
        }
    }
    AudioClip::new(channels, format.sample_rate).map_err(|e| malformed(e.to_string()))
}

/// Maps an amplitude to its 16-bit PCM code; out-of-range values saturate.
pub fn pcm16_code(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes a clip as a canonical 44-byte-header 16-bit PCM WAV image.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let n_ch = clip.n_channels() as u16;
    let data_len = (clip.len() * clip.n_channels() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * u32::from(n_ch) * 2).to_le_bytes());
    out.extend_from_slice(&(n_ch * 2).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..clip.len() {
        for c in clip.channels() {
            out.extend_from_slice(&pcm16_code(c[i]).to_le_bytes());
        }
    }
    out
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, WavError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WavError::IoFailure { path: path.display().to_string(), source })?;
    decode_wav(&bytes)
}

pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), WavError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|source| WavError::IoFailure { path: path.display().to_string(), source })
}
