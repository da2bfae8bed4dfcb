//! The evaluation protocol: repeated random splits, averaged confusion
//! matrices, per-material regression errors against a mean predictor, the
//! noise-gain sweep and random hyperparameter search.

mod metrics;
mod noise;
mod protocol;
mod report;
mod search;
mod splits;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioError;
use crate::features::FeatureError;
use crate::mfcc::MfccError;
use crate::nn::NnError;
use crate::synth::SynthError;

pub use metrics::{
    average_confusion, mean_baseline, percent_error, Averaging, ConfusionCounts, ConfusionMatrix, MaterialError,
    RegressionReport,
};
pub use noise::{
    generate_noise, noise_bank, noise_grid, run_noise_sweep, NoiseKind, NoiseSweepConfig, NoiseSweepResult,
    NoiseTarget, SweepPoint,
};
pub use protocol::{
    evaluate_classifier, evaluate_regressor, run_classification, run_protocol, run_regression, score_classification,
    score_regression, task_seed, train_splits, ClassificationResult, ExperimentConfig, LabeledFeatures, ProtocolReport,
    RegressionResult, SplitMetrics, TaskConfig, TrainedSplit,
};
pub use report::{
    confusion_csv, per_split_csv, regression_csv, sweep_csv, sweep_from_csv, sweep_gnuplot, write_protocol_reports,
    Summary, SweepLine, CONFUSION_FILE, PER_SPLIT_FILE, REGRESSION_FILE, SUMMARY_FILE, SWEEP_FILE,
};
pub use search::{random_search, SearchResult, SearchSpace, Trial};
pub use splits::{make_splits, make_splits_with, HoldoutMode, Split, SplitPlan};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{n} samples cannot hold out {n_test} per split")]
    TooFewSamples { n: usize, n_test: usize },
    #[error("the noise sweep needs at least one noise clip")]
    NoNoiseClips,
    #[error("search space is empty: {0}")]
    EmptySpace(String),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mfcc(#[from] MfccError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The two learning problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Weigh,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Weigh => "weigh",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classify" => Ok(Task::Classify),
            "weigh" => Ok(Task::Weigh),
            other => Err(format!("unknown task `{other}` (classify|weigh)")),
        }
    }
}
