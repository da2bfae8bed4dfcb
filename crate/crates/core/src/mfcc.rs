//! Mel-frequency cepstral coefficients: framing, windowed FFT power
//! spectrum, triangular mel filterbank, log compression and an orthonormal
//! DCT-II.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{downmix, AudioClip, ChannelPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfccError {
    #[error("negative frequency {0}")]
    NegativeFrequency(f64),
    #[error("{filters} mel filters do not fit into {bins} usable FFT bins")]
    TooManyFilters { filters: usize, bins: usize },
    #[error("clip has {len} samples, shorter than one {window}-sample window")]
    ClipTooShort { len: usize, window: usize },
    #[error("invalid MFCC configuration: {0}")]
    InvalidConfig(String),
    #[error("expected a mono clip, got {0} channels")]
    NotMono(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFunction {
    #[default]
    Hamming,
    Hann,
    Rectangular,
}

impl WindowFunction {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    Self::Hamming => 0.54 - 0.46 * phase.cos(),
                    Self::Hann => 0.5 - 0.5 * phase.cos(),
                    Self::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub window_ms: f64,
    pub step_ms: f64,
    pub n_coeffs: usize,
    pub n_mel_filters: usize,
    /// Defaults to the smallest power of two holding one window.
    pub fft_size: Option<usize>,
    pub log_floor: f64,
    pub window_function: WindowFunction,
    pub fmin: f64,
    /// Defaults to the Nyquist frequency.
    pub fmax: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            window_ms: 30.0,
            step_ms: 15.0,
            n_coeffs: 21,
            n_mel_filters: 40,
            fft_size: None,
            log_floor: 1e-10,
            window_function: WindowFunction::Hamming,
            fmin: 0.0,
            fmax: None,
        }
    }
}

impl MfccConfig {
    /// 21 coefficients, used for material classification.
    pub fn classification() -> Self {
        Self::default()
    }

    /// 27 coefficients, used for weight regression.
    pub fn regression() -> Self {
        Self { n_coeffs: 27, ..Self::default() }
    }

    pub fn with_coeffs(mut self, n_coeffs: usize) -> Self {
        self.n_coeffs = n_coeffs;
        self
    }

    pub fn window_samples(&self, rate: u32) -> usize {
        (self.window_ms / 1000.0 * f64::from(rate)).round() as usize
    }

    pub fn step_samples(&self, rate: u32) -> usize {
        (self.step_ms / 1000.0 * f64::from(rate)).round() as usize
    }

    pub fn fft_len(&self, rate: u32) -> usize {
        self.fft_size.unwrap_or_else(|| self.window_samples(rate).next_power_of_two())
    }

    pub fn max_freq(&self, rate: u32) -> f64 {
        self.fmax.unwrap_or(f64::from(rate) / 2.0)
    }

    pub fn validate(&self, rate: u32) -> Result<(), MfccError> {
        let bad = |m: String| Err(MfccError::InvalidConfig(m));
        if !(self.step_ms > 0.0 && self.step_ms <= self.window_ms) {
            return bad(format!("need 0 < step_ms <= window_ms, got step {} window {}", self.step_ms, self.window_ms));
        }
        let window = self.window_samples(rate);
        if window == 0 || self.step_samples(rate) == 0 {
            return bad("window or step rounds to zero samples".into());
        }
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mel_filters {
            return bad(format!(
                "need 1 <= n_coeffs <= n_mel_filters, got {} and {}",
                self.n_coeffs, self.n_mel_filters
            ));
        }
        if self.fft_len(rate) < window {
            return bad(format!("fft_size {} shorter than window {window}", self.fft_len(rate)));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be positive".into());
        }
        let fmax = self.max_freq(rate);
        if self.fmin < 0.0 || fmax <= self.fmin || fmax > f64::from(rate) / 2.0 {
            return bad(format!("need 0 <= fmin < fmax <= rate/2, got {} and {fmax}", self.fmin));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, hex encoded. Guards feature
    /// caches and checkpoints against being mixed across configurations.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hz_to_mel(f: f64) -> Result<f64, MfccError> {
    if f < 0.0 {
        return Err(MfccError::NegativeFrequency(f));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> Result<f64, MfccError> {
    if m < 0.0 {
        return Err(MfccError::NegativeFrequency(m));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

/// Triangular filters over the one-sided power spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_bins: usize,
    /// Row-major, `n_filters × n_bins`.
    weights: Vec<f64>,
    /// First and one-past-last nonzero bin per filter.
    support: Vec<(usize, usize)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_filters(&self) -> usize {
        self.support.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, filter: usize) -> &[f64] {
        &self.weights[filter * self.n_bins..(filter + 1) * self.n_bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Bin holding the apex of each triangle.
    pub fn center_bins(&self) -> Vec<usize> {
        (0..self.n_filters())
            .map(|m| {
                let row = self.row(m);
                let (s, e) = self.support[m];
                (s..e).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(s)
            })
            .collect()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (s, e) = self.support[m];
            let row = &self.row(m)[s..e];
            *o = row.iter().zip(&power[s..e]).map(|(w, p)| w * p).sum();
        }
    }
}

pub fn build_mel_filterbank(config: &MfccConfig, rate: u32) -> Result<MelFilterbank, MfccError> {
    let fft = config.fft_len(rate);
    let n_bins = fft / 2 + 1;
    let n_filters = config.n_mel_filters;
    let fmax = config.max_freq(rate);
    if n_filters == 0 || fmax > f64::from(rate) / 2.0 {
        return Err(MfccError::InvalidConfig(format!("{n_filters} filters, fmax {fmax} for rate {rate}")));
    }
    let lo = hz_to_mel(config.fmin)?;
    let hi = hz_to_mel(fmax)?;
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
        .collect::<Result<_, _>>()?;
    let bin_hz = f64::from(rate) / fft as f64;

    let mut weights = vec![0.0; n_filters * n_bins];
    let mut support = Vec::with_capacity(n_filters);
    for m in 0..n_filters {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        let mut first = None;
        let mut last = 0;
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let v = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            if v > 0.0 {
                *w = v;
                first.get_or_insert(k);
                last = k + 1;
            }
        }
        match first {
            Some(s) => support.push((s, last)),
            None => return Err(MfccError::TooManyFilters { filters: n_filters, bins: n_bins }),
        }
    }
    Ok(MelFilterbank { n_bins, weights, support, centers_hz: edges[1..=n_filters].to_vec() })
}

/// Orthonormal DCT-II as an `n × n` row-major matrix.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m[k * n + i] = scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

pub fn dct_ii(input: &[f64]) -> Vec<f64> {
    let n = input.len();
    let m = dct_matrix(n);
    (0..n).map(|k| m[k * n..(k + 1) * n].iter().zip(input).map(|(a, b)| a * b).sum()).collect()
}

/// Inverse of [`dct_ii`] (the orthonormal DCT-III).
pub fn dct_iii(input: &[f64]) -> Vec<f64> {
    let n = input.len();
    let m = dct_matrix(n);
    (0..n).map(|i| (0..n).map(|k| m[k * n + i] * input[k]).sum()).collect()
}

/// Frames × coefficients feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    n_coeffs: usize,
    data: Vec<f64>,
    frame_times: Vec<f64>,
}

impl MfccSequence {
    pub fn new(n_coeffs: usize, data: Vec<f64>, frame_times: Vec<f64>) -> Result<Self, MfccError> {
        if n_coeffs == 0 || data.len() != n_coeffs * frame_times.len() {
            return Err(MfccError::InvalidConfig(format!(
                "{} values do not form {} frames of {n_coeffs}",
                data.len(),
                frame_times.len()
            )));
        }
        Ok(Self { n_coeffs, data, frame_times })
    }

    /// Builds a sequence from rows; frame times are left at zero.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MfccError> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(MfccError::InvalidConfig("ragged rows".into()));
        }
        Self::new(width, rows.concat(), vec![0.0; rows.len()])
    }

    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_coeffs..(i + 1) * self.n_coeffs]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_coeffs)
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Concatenates two equally long sequences frame by frame.
    pub fn stack(&self, other: &MfccSequence) -> Result<MfccSequence, MfccError> {
        if self.n_frames() != other.n_frames() {
            return Err(MfccError::InvalidConfig("cannot stack sequences of unequal length".into()));
        }
        let data = self.frames().zip(other.frames()).flat_map(|(a, b)| a.iter().chain(b).copied()).collect();
        MfccSequence::new(self.n_coeffs + other.n_coeffs, data, self.frame_times.clone())
    }
}

/// Number of full windows that fit into `n_samples`.
pub fn frame_count(n_samples: usize, window: usize, step: usize) -> usize {
    if n_samples < window {
        0
    } else {
        (n_samples - window) / step + 1
    }
}

/// Reusable extractor holding the window, FFT plan, filterbank and DCT.
#[derive(Clone)]
pub struct MfccExtractor {
    config: MfccConfig,
    rate: u32,
    window: Vec<f64>,
    step: usize,
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
    filterbank: MelFilterbank,
    dct: Vec<f64>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("config", &self.config).field("rate", &self.rate).finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(config: &MfccConfig, rate: u32) -> Result<Self, MfccError> {
        config.validate(rate)?;
        let fft_len = config.fft_len(rate);
        Ok(Self {
            config: config.clone(),
            rate,
            window: config.window_function.coefficients(config.window_samples(rate)),
            step: config.step_samples(rate),
            fft: FftPlanner::new().plan_fft_forward(fft_len),
            fft_len,
            filterbank: build_mel_filterbank(config, rate)?,
            dct: dct_matrix(config.n_mel_filters),
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// One-sided `|FFT|²` of a frame zero-padded to the FFT length. No
    /// window is applied here.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(self.fft_len, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf[..self.fft_len / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Mel filterbank energies of one windowed frame.
    pub fn mel_energies(&self, frame: &[f64]) -> Vec<f64> {
        let windowed: Vec<f64> = frame.iter().zip(&self.window).map(|(x, w)| x * w).collect();
        let power = self.power_spectrum(&windowed);
        let mut energies = vec![0.0; self.filterbank.n_filters()];
        self.filterbank.apply(&power, &mut energies);
        energies
    }

    fn cepstrum(&self, energies: &[f64], out: &mut [f64]) {
        let n = energies.len();
        let logs: Vec<f64> = energies.iter().map(|e| (e + self.config.log_floor).ln()).collect();
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.dct[k * n..(k + 1) * n].iter().zip(&logs).map(|(a, b)| a * b).sum();
        }
    }

    /// MFCCs of a mono sample buffer.
    pub fn compute(&self, samples: &[f64]) -> Result<MfccSequence, MfccError> {
        let window = self.window.len();
        let n_frames = frame_count(samples.len(), window, self.step);
        if n_frames == 0 {
            return Err(MfccError::ClipTooShort { len: samples.len(), window });
        }
        let n_coeffs = self.config.n_coeffs;
        let mut data = vec![0.0; n_frames * n_coeffs];
        for (f, out) in data.chunks_exact_mut(n_coeffs).enumerate() {
            let start = f * self.step;
            let energies = self.mel_energies(&samples[start..start + window]);
            self.cepstrum(&energies, out);
        }
        let times = (0..n_frames).map(|f| (f * self.step) as f64 / f64::from(self.rate)).collect();
        MfccSequence::new(n_coeffs, data, times)
    }

    /// Applies the channel policy, then extracts. `Stack` on a stereo clip
    /// doubles the feature width.
    pub fn compute_clip(&self, clip: &AudioClip, policy: ChannelPolicy) -> Result<MfccSequence, MfccError> {
        if clip.sample_rate() != self.rate {
            return Err(MfccError::InvalidConfig(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.rate,
                clip.sample_rate()
            )));
        }
        if policy == ChannelPolicy::Stack && clip.n_channels() == 2 {
            let left = self.compute(clip.channel(0))?;
            let right = self.compute(clip.channel(1))?;
            return left.stack(&right);
        }
        self.compute(downmix(clip, policy).channel(0))
    }
}

/// One-shot MFCC extraction of a mono clip.
pub fn compute_mfcc(clip: &AudioClip, config: &MfccConfig) -> Result<MfccSequence, MfccError> {
    if clip.n_channels() != 1 {
        return Err(MfccError::NotMono(clip.n_channels()));
    }
    MfccExtractor::new(config, clip.sample_rate())?.compute(clip.channel(0))
}

/// Feature width produced for a given coefficient count and channel policy.
pub fn feature_width(n_coeffs: usize, policy: ChannelPolicy, n_channels: usize) -> usize {
    if policy == ChannelPolicy::Stack && n_channels == 2 {
        2 * n_coeffs
    } else {
        n_coeffs
    }
}
