use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::protocol::{
    run_protocol, score_classification, score_regression, task_seed, train_splits, ExperimentConfig, LabeledFeatures,
    ProtocolReport,
};
use super::{ExperimentError, Task};
use crate::audio::{downmix, mix_noise_at, normalize_peak, AudioClip, ChannelPolicy};
use crate::features::extract_features;
use crate::synth::{mix_seed, Resonator};

/// Synthetic interference types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    /// Several amplitude-modulated speech-band noises.
    Babble,
    /// Mains hum with harmonics.
    Hum,
    /// Sparse decaying clicks.
    Rain,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] =
        [NoiseKind::White, NoiseKind::Pink, NoiseKind::Brown, NoiseKind::Babble, NoiseKind::Hum, NoiseKind::Rain];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
            NoiseKind::Babble => "babble",
            NoiseKind::Hum => "hum",
            NoiseKind::Rain => "rain",
        }
    }
}

fn noise_channel(kind: NoiseKind, len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
    match kind {
        NoiseKind::White => white(rng),
        NoiseKind::Pink => {
            // Kellet's three-pole approximation of a 1/f spectrum.
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            white(rng)
                .into_iter()
                .map(|w| {
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        NoiseKind::Brown => {
            let mut y = 0.0;
            let v: Vec<f64> = white(rng)
                .into_iter()
                .map(|w| {
                    y = 0.995 * y + 0.05 * w;
                    y
                })
                .collect();
            let mean = v.iter().sum::<f64>() / len.max(1) as f64;
            v.into_iter().map(|x| x - mean).collect()
        }
        NoiseKind::Babble => {
            let mut out = vec![0.0; len];
            for _ in 0..6 {
                let center = rng.random_range(300.0..3000.0);
                let band = Resonator::new(center, center * 0.8, rate).filter(&white(rng));
                let syllables = rng.random_range(3.0..6.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                for (i, (o, b)) in out.iter_mut().zip(band).enumerate() {
                    let env = 0.5 + 0.5 * (2.0 * PI * syllables * i as f64 / rate + phase).sin();
                    *o += b * env * env;
                }
            }
            out
        }
        NoiseKind::Hum => {
            let f0 = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    let tone: f64 =
                        (1..=8).map(|k| (2.0 * PI * f0 * k as f64 * t + phase * k as f64).sin() / k as f64).sum();
                    tone + 0.05 * rng.random_range(-1.0..1.0)
                })
                .collect()
        }
        NoiseKind::Rain => {
            let mut out: Vec<f64> = (0..len).map(|_| 0.02 * rng.random_range(-1.0..1.0)).collect();
            let decay = 0.001 * rate;
            let mut at = 0.0;
            loop {
                // Poisson arrivals at 300 drops per second.
                at += -(1.0 - rng.random::<f64>()).ln() / 300.0 * rate;
                if at as usize >= len {
                    break;
                }
                let amp = rng.random_range(0.2..1.0);
                for k in 0..(5.0 * decay) as usize {
                    if let Some(o) = out.get_mut(at as usize + k) {
                        *o += amp * rng.random_range(-1.0..1.0) * (-(k as f64) / decay).exp();
                    }
                }
            }
            out
        }
    }
}

/// A peak-normalized noise clip with independent channels.
pub fn generate_noise(
    kind: NoiseKind,
    len: usize,
    n_channels: usize,
    rate: u32,
    seed: u64,
) -> Result<AudioClip, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = (0..n_channels).map(|_| noise_channel(kind, len, f64::from(rate), &mut rng)).collect();
    Ok(normalize_peak(&AudioClip::new(channels, rate)?)?)
}

/// One clip of every [`NoiseKind`].
pub fn noise_bank(len: usize, n_channels: usize, rate: u32, seed: u64) -> Result<Vec<AudioClip>, ExperimentError> {
    NoiseKind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| generate_noise(kind, len, n_channels, rate, mix_seed(seed, &[k as u64])))
        .collect()
}

/// `0, step, 2·step, …` up to and including `max` (within rounding).
pub fn noise_grid(max: f64, step: f64) -> Result<Vec<f64>, ExperimentError> {
    if !(step > 0.0) || !(0.0..=1.0).contains(&max) {
        return Err(ExperimentError::InvalidConfig(format!("noise grid max {max}, step {step}")));
    }
    let n = (max / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((i as f64 * step) * 1e9).round() / 1e9).collect())
}

/// Which data the noise is mixed into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    /// Training and test clips alike; every gain retrains.
    #[default]
    Both,
    /// Models are trained once on clean clips and tested on noisy ones.
    TestOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSweepConfig {
    pub gains: Vec<f64>,
    pub target: NoiseTarget,
    pub tasks: Vec<Task>,
}

impl Default for NoiseSweepConfig {
    fn default() -> Self {
        Self {
            gains: noise_grid(0.5, 0.05).expect("static grid"),
            target: NoiseTarget::Both,
            tasks: vec![Task::Classify, Task::Weigh],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gain: f64,
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
    pub report: ProtocolReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepResult {
    pub target: NoiseTarget,
    pub points: Vec<SweepPoint>,
}

impl NoiseSweepResult {
    pub fn gains(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.gain).collect()
    }
}

fn conform_channels(noise: &AudioClip, n_channels: usize) -> Result<AudioClip, ExperimentError> {
    Ok(match (noise.n_channels(), n_channels) {
        (a, b) if a == b => noise.clone(),
        (1, 2) => AudioClip::new(vec![noise.channel(0).to_vec(); 2], noise.sample_rate())?,
        _ => downmix(noise, ChannelPolicy::Mix),
    })
}

/// Mixes clip `i` with its assigned noise at `gain`. The noise choice and
/// read offset per clip depend only on `seed` and `i`, so every gain uses
/// the same pairing.
fn noisy_clips(
    clips: &[AudioClip],
    noises: &[AudioClip],
    gain: f64,
    seed: u64,
) -> Result<Vec<AudioClip>, ExperimentError> {
    clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let pick = mix_seed(seed, &[i as u64, 0xA0]) as usize % noises.len();
            let noise = conform_channels(&noises[pick], clip.n_channels())?;
            let offset = mix_seed(seed, &[i as u64, 0xA1]) as usize % noise.len().max(1);
            Ok(mix_noise_at(clip, &noise, gain, offset)?)
        })
        .collect()
}

/// Repeats the protocol for every gain with noise overlaid on the clips.
pub fn run_noise_sweep(
    clips: &[AudioClip],
    labels: &LabeledFeatures,
    noises: &[AudioClip],
    experiment: &ExperimentConfig,
    sweep: &NoiseSweepConfig,
) -> Result<NoiseSweepResult, ExperimentError> {
    if noises.is_empty() {
        return Err(ExperimentError::NoNoiseClips);
    }
    if sweep.gains.iter().any(|g| !(0.0..=1.0).contains(g)) || sweep.gains.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::InvalidConfig("gains must increase strictly within [0, 1]".into()));
    }
    experiment.validate()?;
    let noises: Vec<AudioClip> = noises.iter().map(normalize_peak).collect::<Result<_, _>>()?;
    let pairing_seed = mix_seed(experiment.seed, &[0x5EED]);

    let points = match sweep.target {
        NoiseTarget::Both => sweep
            .gains
            .iter()
            .map(|&gain| {
                let mixed = noisy_clips(clips, &noises, gain, pairing_seed)?;
                let report = run_protocol(&mixed, labels, experiment, &sweep.tasks)?;
                Ok(point(gain, report))
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?,
        NoiseTarget::TestOnly => {
            let plan = experiment.splits(labels.len())?;
            let mut trained = Vec::new();
            for &task in &sweep.tasks {
                let tc = experiment.task(task);
                let clean = extract_features(clips, &tc.mfcc, experiment.channels)?;
                trained.push((task, train_splits(&clean, labels, &plan, task, tc, task_seed(experiment.seed, task))?));
            }
            sweep
                .gains
                .iter()
                .map(|&gain| {
                    let mixed = noisy_clips(clips, &noises, gain, pairing_seed)?;
                    let mut report = ProtocolReport {
                        n_samples: labels.len(),
                        n_splits: plan.len(),
                        classification: None,
                        regression: None,
                    };
                    for (task, models) in &trained {
                        let features = extract_features(&mixed, &experiment.task(*task).mfcc, experiment.channels)?;
                        match task {
                            Task::Classify => {
                                report.classification =
                                    Some(score_classification(models, &features, labels, &plan, experiment.averaging)?)
                            }
                            Task::Weigh => {
                                report.regression = Some(score_regression(models, &features, labels, &plan)?)
                            }
                        }
                    }
                    Ok(point(gain, report))
                })
                .collect::<Result<Vec<_>, ExperimentError>>()?
        }
    };
    Ok(NoiseSweepResult { target: sweep.target, points })
}

fn point(gain: f64, report: ProtocolReport) -> SweepPoint {
    SweepPoint {
        gain,
        accuracy: report.classification.as_ref().map(|c| c.accuracy),
        mae: report.regression.as_ref().map(|r| r.report.overall_mae),
        report,
    }
}
