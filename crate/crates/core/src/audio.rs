//! Waveform representation and the sample-level operations applied before
//! feature extraction: peak normalization, length conforming, channel
//! reduction and signal/noise gain mixing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical corpus sample rate.
pub const CORPUS_RATE: u32 = 48_000;

/// Canonical clip length in milliseconds.
pub const CLIP_MS: f64 = 625.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("clip is silent; peak normalization is undefined")]
    SilentClip,
    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("channel count mismatch: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("noise gain {0} outside [0, 1]")]
    GainOutOfRange(f64),
}

/// A sampled waveform with one sequence per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(AudioError::InvalidClip(format!("expected 1 or 2 channels, got {}", channels.len())));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(AudioError::InvalidClip("channels differ in length".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn silent(n_channels: usize, len: usize, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![vec![0.0; len]; n_channels], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    /// Largest absolute sample over all channels.
    pub fn peak(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0_f64, |acc, s| acc.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        let n = (self.len() * self.n_channels()) as f64;
        if n == 0.0 {
            return 0.0;
        }
        (self.channels.iter().flatten().map(|s| s * s).sum::<f64>() / n).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> AudioClip {
        AudioClip {
            channels: self.channels.iter().map(|c| c.iter().map(|s| s * factor).collect()).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Scales the clip so that its global peak is exactly 1.0 (0 dBFS).
pub fn normalize_peak(clip: &AudioClip) -> Result<AudioClip, AudioError> {
    let peak = clip.peak();
    if peak == 0.0 {
        return Err(AudioError::SilentClip);
    }
    if peak == 1.0 {
        return Ok(clip.clone());
    }
    Ok(clip.scaled(1.0 / peak))
}

/// Number of samples a duration occupies at `rate`.
pub fn samples_for_ms(ms: f64, rate: u32) -> usize {
    (ms / 1000.0 * f64::from(rate)).round() as usize
}

/// Truncates or zero-pads each channel at the end to exactly `target_ms`.
pub fn conform(clip: &AudioClip, target_ms: f64, required_rate: u32) -> Result<AudioClip, AudioError> {
    if clip.sample_rate != required_rate {
        return Err(AudioError::RateMismatch { expected: required_rate, actual: clip.sample_rate });
    }
    let target = samples_for_ms(target_ms, required_rate);
    let channels = clip
        .channels
        .iter()
        .map(|c| {
            let mut out = c[..c.len().min(target)].to_vec();
            out.resize(target, 0.0);
            out
        })
        .collect();
    AudioClip::new(channels, required_rate)
}

/// How a stereo recording is reduced to the feature stream(s).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelPolicy {
    /// Per-sample mean of the channels.
    #[default]
    Mix,
    Left,
    Right,
    /// Features are computed per channel and concatenated frame by frame.
    Stack,
}

impl std::str::FromStr for ChannelPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mix" => Ok(Self::Mix),
            "left" => Ok(Self::Left),
            "right" => Ok(Self::Right),
            "stack" => Ok(Self::Stack),
            other => Err(format!("unknown channel policy `{other}` (mix|left|right|stack)")),
        }
    }
}

/// Reduces a clip to mono. Mono input is returned unchanged for every
/// policy; `Stack` behaves like `Mix` here since stacking happens at the
/// feature level.
pub fn downmix(clip: &AudioClip, policy: ChannelPolicy) -> AudioClip {
    if clip.n_channels() == 1 {
        return clip.clone();
    }
    let samples = match policy {
        ChannelPolicy::Left => clip.channels[0].clone(),
        ChannelPolicy::Right => clip.channels[1].clone(),
        ChannelPolicy::Mix | ChannelPolicy::Stack => {
            clip.channels[0].iter().zip(&clip.channels[1]).map(|(l, r)| 0.5 * (l + r)).collect()
        }
    };
    AudioClip { channels: vec![samples], sample_rate: clip.sample_rate }
}

/// Complementary gains applied to a normalized signal and a normalized noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainMix {
    signal_gain: f64,
    noise_gain: f64,
}

impl GainMix {
    pub fn new(noise_gain: f64) -> Result<Self, AudioError> {
        if !(0.0..=1.0).contains(&noise_gain) {
            return Err(AudioError::GainOutOfRange(noise_gain));
        }
        Ok(Self { signal_gain: 1.0 - noise_gain, noise_gain })
    }

    pub fn signal_gain(&self) -> f64 {
        self.signal_gain
    }

    pub fn noise_gain(&self) -> f64 {
        self.noise_gain
    }
}

/// `(1 - g)·signal + g·noise`. The noise is tiled when shorter than the
/// signal and truncated when longer.
pub fn mix_noise(signal: &AudioClip, noise: &AudioClip, noise_gain: f64) -> Result<AudioClip, AudioError> {
    mix_noise_at(signal, noise, noise_gain, 0)
}

/// Like [`mix_noise`], reading the noise starting at `offset` (wrapping).
pub fn mix_noise_at(
    signal: &AudioClip,
    noise: &AudioClip,
    noise_gain: f64,
    offset: usize,
) -> Result<AudioClip, AudioError> {
    let gains = GainMix::new(noise_gain)?;
    if signal.sample_rate != noise.sample_rate {
        return Err(AudioError::RateMismatch { expected: signal.sample_rate, actual: noise.sample_rate });
    }
    if signal.n_channels() != noise.n_channels() {
        return Err(AudioError::ChannelMismatch { left: signal.n_channels(), right: noise.n_channels() });
    }
    if noise.is_empty() && !signal.is_empty() {
        return Err(AudioError::InvalidClip("noise clip is empty".into()));
    }
    let (gs, gn) = (gains.signal_gain, gains.noise_gain);
    let channels = signal
        .channels
        .iter()
        .zip(&noise.channels)
        .map(|(s, n)| s.iter().enumerate().map(|(i, &x)| gs * x + gn * n[(i + offset) % n.len()]).collect())
        .collect();
    AudioClip::new(channels, signal.sample_rate)
}
