//! Deterministic synthetic capsule-shake recordings.
//!
//! Each clip holds one or two deceleration bursts (one per half cycle of a
//! ~1 Hz shake). A burst is a cloud of grain impacts; each impact is an
//! exponentially decaying noise excitation driven through a second-order
//! resonator tuned to the material. A white noise floor and an optional
//! servo hum sit underneath. Clips are peak-normalized on output.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{normalize_peak, samples_for_ms, AudioClip, AudioError, CLIP_MS, CORPUS_RATE};
use crate::mfcc::hex_digest;
use crate::wav::{load_wav, save_wav, WavError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::IoFailure { path: path.display().to_string(), source }
}

/// The ten capsule fillings, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Coins,
    Glass,
    Gravel,
    Herbs,
    Nuts,
    Plastic,
    Rice,
    Sand,
    Stone,
    Sugar,
}

pub const N_MATERIALS: usize = 10;

impl Material {
    pub const ALL: [Material; N_MATERIALS] = [
        Material::Coins,
        Material::Glass,
        Material::Gravel,
        Material::Herbs,
        Material::Nuts,
        Material::Plastic,
        Material::Rice,
        Material::Sand,
        Material::Stone,
        Material::Sugar,
    ];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Coins => "coins",
            Self::Glass => "glass",
            Self::Gravel => "gravel",
            Self::Herbs => "herbs",
            Self::Nuts => "nuts",
            Self::Plastic => "plastic",
            Self::Rice => "rice",
            Self::Sand => "sand",
            Self::Stone => "stone",
            Self::Sugar => "sugar",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.name() == name)
    }
}

impl std::fmt::Display for Material {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fill masses in grams of the three capsules per material.
pub const CAPSULE_WEIGHTS: [[f64; 3]; N_MATERIALS] = [
    [20.7, 39.1, 61.8],
    [6.3, 12.6, 18.9],
    [10.4, 20.4, 29.9],
    [1.0, 2.0, 3.0],
    [9.9, 20.1, 30.1],
    [1.7, 3.4, 5.2],
    [4.5, 9.0, 13.5],
    [8.0, 16.0, 24.1],
    [4.5, 7.3, 10.8],
    [4.0, 8.0, 12.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialProfile {
    pub material: Material,
    /// Grams per grain.
    pub grain_mass: f64,
    pub impact_center_freq: f64,
    pub impact_bandwidth: f64,
    /// Time constant of each impact's excitation envelope.
    pub decay_ms: f64,
    pub amplitude_per_gram: f64,
}

impl MaterialProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.grain_mass > 0.0) {
            return Err(SynthError::InvalidSpec(format!("{}: grain_mass must be positive", self.material)));
        }
        if !(20.0..=20_000.0).contains(&self.impact_center_freq) {
            return Err(SynthError::InvalidSpec(format!(
                "{}: center frequency {} outside 20..20000 Hz",
                self.material, self.impact_center_freq
            )));
        }
        if !(self.decay_ms > 0.0) || !(self.impact_bandwidth > 0.0) || !(self.amplitude_per_gram > 0.0) {
            return Err(SynthError::InvalidSpec(format!(
                "{}: decay, bandwidth and amplitude must be positive",
                self.material
            )));
        }
        Ok(())
    }

    /// The built-in profile table. Heavy coarse fillings ring low and long
    /// with few grains; fine fillings hiss high and short with many. Sand
    /// and sugar are nearly the same on purpose.
    pub fn defaults() -> Vec<MaterialProfile> {
        use Material::*;
        let p = |material, grain_mass, f, bw, decay_ms, apg| MaterialProfile {
            material,
            grain_mass,
            impact_center_freq: f,
            impact_bandwidth: bw,
            decay_ms,
            amplitude_per_gram: apg,
        };
        vec![
            p(Coins, 5.0, 3200.0, 250.0, 20.0, 0.12),
            p(Glass, 1.2, 2300.0, 500.0, 10.0, 0.45),
            p(Gravel, 0.8, 1400.0, 1200.0, 6.0, 0.6),
            p(Herbs, 0.02, 6500.0, 5000.0, 1.5, 12.0),
            p(Nuts, 1.5, 600.0, 450.0, 9.0, 0.35),
            p(Plastic, 0.05, 4300.0, 1500.0, 3.0, 6.0),
            p(Rice, 0.025, 2800.0, 2400.0, 2.0, 14.0),
            p(Sand, 0.02, 8800.0, 6000.0, 0.8, 14.0),
            p(Stone, 2.5, 1150.0, 250.0, 22.0, 0.25),
            p(Sugar, 0.012, 9400.0, 6000.0, 0.8, 23.0),
        ]
    }

    pub fn default_for(material: Material) -> MaterialProfile {
        Self::defaults().swap_remove(material.label())
    }
}

/// The two shake orientations (wrist tilted by 90° between them).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Procedure {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleSpec {
    pub profile: MaterialProfile,
    pub fill_mass: f64,
    pub procedure: Procedure,
    pub shake_freq: f64,
}

impl CapsuleSpec {
    pub fn new(profile: MaterialProfile, fill_mass: f64, procedure: Procedure) -> Self {
        Self { profile, fill_mass, procedure, shake_freq: 1.0 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.profile.validate()?;
        if !(self.fill_mass > 0.0 && self.fill_mass.is_finite()) {
            return Err(SynthError::InvalidSpec("fill_mass must be positive".into()));
        }
        if !(0.2..=5.0).contains(&self.shake_freq) {
            return Err(SynthError::InvalidSpec(format!("shake frequency {} Hz", self.shake_freq)));
        }
        Ok(())
    }

    pub fn grain_count(&self) -> usize {
        ((self.fill_mass / self.profile.grain_mass).round() as usize).max(1)
    }
}

/// Knobs of the synthesis beyond the capsule itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub duration_ms: f64,
    pub sample_rate: u32,
    pub noise_floor_dbfs: f64,
    pub servo_hum: bool,
    pub onset_jitter_ms: f64,
    pub stereo: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            duration_ms: CLIP_MS,
            sample_rate: CORPUS_RATE,
            noise_floor_dbfs: -40.0,
            servo_hum: true,
            onset_jitter_ms: 20.0,
            stereo: true,
        }
    }
}

/// SplitMix64 finalizer used to derive independent per-clip streams.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Constant-peak-gain band-pass biquad.
pub(crate) struct Resonator {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Resonator {
    pub(crate) fn new(center: f64, bandwidth: f64, rate: f64) -> Self {
        let center = center.min(0.45 * rate);
        let w0 = 2.0 * PI * center / rate;
        let q = (center / bandwidth).max(0.3);
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self { b0: alpha / a0, b2: -alpha / a0, a1: -2.0 * w0.cos() / a0, a2: (1.0 - alpha) / a0 }
    }

    pub(crate) fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b0 * v + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = v;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// A clip before peak normalization, for level measurements.
pub fn synth_shake_raw(capsule: &CapsuleSpec, options: &SynthOptions, seed: u64) -> Result<AudioClip, SynthError> {
    capsule.validate()?;
    if options.sample_rate == 0 || !(options.duration_ms > 0.0) {
        return Err(SynthError::InvalidSpec("duration and sample rate must be positive".into()));
    }
    let rate = f64::from(options.sample_rate);
    let len = samples_for_ms(options.duration_ms, options.sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prof = &capsule.profile;
    let ms = |v: f64| v / 1000.0 * rate;

    // Decelerations happen twice per shake cycle. Procedure B starts later
    // in the cycle, so at 625 ms it usually holds one burst, A holds two.
    let half_period = rate / (2.0 * capsule.shake_freq);
    let first = match capsule.procedure {
        Procedure::A => ms(70.0),
        Procedure::B => ms(160.0),
    };
    let jitter = ms(options.onset_jitter_ms);
    // Heavier fillings take longer to settle.
    let spread = ms(20.0 + 1.2 * capsule.fill_mass);
    let grains = capsule.grain_count();
    let amp = prof.amplitude_per_gram * prof.grain_mass;
    let env_len = (ms(prof.decay_ms) * 5.0).ceil() as usize;
    let decay = ms(prof.decay_ms);
    // Orientation B damps the resonance slightly.
    let tilt = match capsule.procedure {
        Procedure::A => 1.0,
        Procedure::B => 0.93,
    };

    let mut excitation = vec![0.0; len];
    let mut burst_at = first;
    while burst_at < len as f64 {
        let start = burst_at + rng.random_range(-jitter..=jitter);
        for _ in 0..grains {
            // Onsets thin out towards the end of the burst.
            let u: f64 = rng.random();
            let onset = start + spread * u * u;
            let gain = amp * rng.random_range(0.5..1.5);
            if onset < 0.0 {
                continue;
            }
            let at = onset as usize;
            for k in 0..env_len.min(len.saturating_sub(at)) {
                let white: f64 = rng.random_range(-1.0..1.0);
                excitation[at + k] += gain * white * (-(k as f64) / decay).exp();
            }
        }
        burst_at += half_period;
    }
    let resonator = Resonator::new(prof.impact_center_freq * tilt, prof.impact_bandwidth, rate);
    let rattle = resonator.filter(&excitation);

    let floor_rms = 10f64.powf(options.noise_floor_dbfs / 20.0);
    // Uniform noise in [-a, a] has RMS a/√3.
    let floor_amp = floor_rms * 3f64.sqrt();
    let hum_phase = rng.random_range(0.0..2.0 * PI);
    let hum_freq = rng.random_range(95.0..105.0);
    let n_ch = if options.stereo { 2 } else { 1 };
    let gains: [f64; 2] = match capsule.procedure {
        Procedure::A => [1.0, 0.8],
        Procedure::B => [0.8, 1.0],
    };
    let mut channels = Vec::with_capacity(n_ch);
    for gain in gains.iter().take(n_ch) {
        let ch = rattle
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let t = i as f64 / rate;
                let mut v = gain * r + rng.random_range(-floor_amp..floor_amp);
                if options.servo_hum {
                    let phase = 2.0 * PI * hum_freq * t + hum_phase;
                    v += floor_rms * (phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin());
                }
                v
            })
            .collect();
        channels.push(ch);
    }
    Ok(AudioClip::new(channels, options.sample_rate)?)
}

/// Synthesizes one peak-normalized shake recording.
pub fn synth_shake_clip(capsule: &CapsuleSpec, options: &SynthOptions, seed: u64) -> Result<AudioClip, SynthError> {
    Ok(normalize_peak(&synth_shake_raw(capsule, options, seed)?)?)
}

/// Generator settings for a whole corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub profiles: Vec<MaterialProfile>,
    /// Fill masses per profile, same order as `profiles`.
    pub weights: Vec<Vec<f64>>,
    pub takes_per_capsule: usize,
    pub options: SynthOptions,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            profiles: MaterialProfile::defaults(),
            weights: CAPSULE_WEIGHTS.iter().map(|w| w.to_vec()).collect(),
            takes_per_capsule: 36,
            options: SynthOptions::default(),
        }
    }
}

impl GeneratorConfig {
    /// 9 takes per capsule, 270 clips.
    pub fn desk_scale() -> Self {
        Self { takes_per_capsule: 9, ..Self::default() }
    }

    pub fn digest(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.profiles.len() != self.weights.len() {
            return Err(SynthError::InvalidSpec("one weight list per profile is required".into()));
        }
        if self.takes_per_capsule == 0 {
            return Err(SynthError::InvalidSpec("takes_per_capsule must be positive".into()));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        if self.weights.iter().flatten().any(|w| !(*w > 0.0)) {
            return Err(SynthError::InvalidSpec("weights must be positive".into()));
        }
        Ok(())
    }

    /// Capsules in id order: profile-major, weight-minor.
    pub fn capsules(&self) -> Vec<(usize, &MaterialProfile, f64)> {
        let mut out = Vec::new();
        for (p, ws) in self.profiles.iter().zip(&self.weights) {
            for &w in ws {
                out.push((out.len(), p, w));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub material: Material,
    pub weight_g: f64,
    pub capsule_id: usize,
    pub procedure: Procedure,
    pub take: usize,
}

impl ManifestEntry {
    pub fn label(&self) -> usize {
        self.material.label()
    }
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config_digest: String,
    pub sample_rate: u32,
    pub duration_ms: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_capsules(&self) -> usize {
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.capsule_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let m: DatasetManifest = serde_json::from_str(text).map_err(|e| SynthError::InvalidManifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.version != MANIFEST_VERSION {
            return Err(SynthError::InvalidManifest(format!("version {}", self.version)));
        }
        for e in &self.entries {
            if !(e.weight_g > 0.0 && e.weight_g.is_finite()) {
                return Err(SynthError::InvalidManifest(format!("{}: weight {}", e.path, e.weight_g)));
            }
            let p = Path::new(&e.path);
            if e.path.is_empty()
                || p.is_absolute()
                || p.components().any(|c| matches!(c, std::path::Component::ParentDir))
            {
                return Err(SynthError::InvalidManifest(format!(
                    "clip path `{}` must stay inside the dataset",
                    e.path
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(io_err(path))
    }
}

/// Clips and their manifest, held in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub clips: Vec<AudioClip>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.manifest.entries
    }

    /// Reads a dataset directory containing `manifest.json` and its clips.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SynthError> {
        let dir = dir.as_ref();
        let manifest = DatasetManifest::load(dir.join(MANIFEST_FILE))?;
        let clips = manifest
            .entries
            .par_iter()
            .map(|e| load_wav(dir.join(&e.path)).map_err(SynthError::from))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { manifest, clips })
    }

    /// Writes clips under `clips/` and the manifest at the top of `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        for e in &self.manifest.entries {
            if let Some(parent) = dir.join(&e.path).parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
        }
        self.manifest
            .entries
            .par_iter()
            .zip(self.clips.par_iter())
            .try_for_each(|(e, c)| save_wav(c, dir.join(&e.path)))?;
        self.manifest.save(dir.join(MANIFEST_FILE))
    }
}

fn clip_path(material: Material, capsule: usize, take: usize, procedure: Procedure) -> String {
    let proc = match procedure {
        Procedure::A => "a",
        Procedure::B => "b",
    };
    format!("clips/{material}_c{capsule:02}_{proc}_t{take:02}.wav")
}

/// Synthesizes every take of every capsule in memory. Takes are split
/// evenly between the two procedures, A first.
pub fn synthesize_corpus(config: &GeneratorConfig, seed: u64) -> Result<Corpus, SynthError> {
    config.validate()?;
    let takes = config.takes_per_capsule;
    let jobs: Vec<(ManifestEntry, CapsuleSpec)> = config
        .capsules()
        .into_iter()
        .flat_map(|(id, profile, weight)| {
            (0..takes).map(move |take| {
                let procedure = if take < takes.div_ceil(2) { Procedure::A } else { Procedure::B };
                (
                    ManifestEntry {
                        path: clip_path(profile.material, id, take, procedure),
                        material: profile.material,
                        weight_g: weight,
                        capsule_id: id,
                        procedure,
                        take,
                    },
                    CapsuleSpec::new(profile.clone(), weight, procedure),
                )
            })
        })
        .collect();
    let clips = jobs
        .par_iter()
        .map(|(e, spec)| {
            let clip_seed = mix_seed(seed, &[e.capsule_id as u64, e.take as u64]);
            synth_shake_clip(spec, &config.options, clip_seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus {
        manifest: DatasetManifest {
            version: MANIFEST_VERSION,
            seed,
            config_digest: config.digest(),
            sample_rate: config.options.sample_rate,
            duration_ms: config.options.duration_ms,
            entries: jobs.into_iter().map(|(e, _)| e).collect(),
        },
        clips,
    })
}

/// Synthesizes a corpus and writes it to `out_dir`.
pub fn generate_dataset(
    config: &GeneratorConfig,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<DatasetManifest, SynthError> {
    let out_dir: PathBuf = out_dir.as_ref().to_path_buf();
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let corpus = synthesize_corpus(config, seed)?;
    corpus.save(&out_dir)?;
    Ok(corpus.manifest)
}
