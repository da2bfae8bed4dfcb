use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{average_confusion, mean_baseline, Averaging, ConfusionCounts, ConfusionMatrix, RegressionReport};
use super::splits::{make_splits_with, HoldoutMode, Split, SplitPlan};
use super::{ExperimentError, Task};
use crate::audio::{AudioClip, ChannelPolicy};
use crate::features::extract_features;
use crate::mfcc::{MfccConfig, MfccSequence};
use crate::nn::{
    init_model, train, CellKind, Example, LayerSpec, NetworkModel, Output, Standardizer, Target, TargetScale,
    TrainConfig, TrainHistory,
};
use crate::synth::{mix_seed, DatasetManifest, Material, N_MATERIALS};

/// Model, features and training settings for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub layers: Vec<LayerSpec>,
    pub mfcc: MfccConfig,
    pub train: TrainConfig,
    /// Standardize input coefficients (and regression targets) with
    /// statistics of the training split.
    pub standardize: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self::full_scale(Task::Classify)
    }
}

impl TaskConfig {
    pub fn full_scale(task: Task) -> Self {
        match task {
            Task::Classify => Self {
                layers: LayerSpec::default_classifier(),
                mfcc: MfccConfig::classification(),
                train: TrainConfig::default(),
                standardize: true,
            },
            Task::Weigh => Self {
                layers: LayerSpec::default_regressor(),
                mfcc: MfccConfig::regression(),
                train: TrainConfig::default(),
                standardize: true,
            },
        }
    }

    /// Same features, much smaller networks.
    pub fn desk_scale(task: Task) -> Self {
        let layers = match task {
            Task::Classify => LayerSpec::classifier(CellKind::Gru, 64, 16, N_MATERIALS),
            Task::Weigh => LayerSpec::regressor(CellKind::Lstm, 64, 16),
        };
        Self { layers, ..Self::full_scale(task) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_splits: usize,
    pub n_test: usize,
    pub holdout: HoldoutMode,
    pub seed: u64,
    pub channels: ChannelPolicy,
    pub averaging: Averaging,
    pub classify: TaskConfig,
    pub weigh: TaskConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl ExperimentConfig {
    /// 15 splits of 80 held-out clips with the full-size networks.
    pub fn full_scale() -> Self {
        Self {
            n_splits: 15,
            n_test: 80,
            holdout: HoldoutMode::Shared,
            seed: 0,
            channels: ChannelPolicy::Mix,
            averaging: Averaging::RowMean,
            classify: TaskConfig::full_scale(Task::Classify),
            weigh: TaskConfig::full_scale(Task::Weigh),
        }
    }

    /// 3 splits with GRU 64/16 and LSTM 64/16.
    pub fn desk_scale() -> Self {
        Self {
            n_splits: 3,
            classify: TaskConfig::desk_scale(Task::Classify),
            weigh: TaskConfig::desk_scale(Task::Weigh),
            ..Self::full_scale()
        }
    }

    pub fn task(&self, task: Task) -> &TaskConfig {
        match task {
            Task::Classify => &self.classify,
            Task::Weigh => &self.weigh,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn splits(&self, n_samples: usize) -> Result<SplitPlan, ExperimentError> {
        make_splits_with(n_samples, self.n_splits, self.n_test, self.holdout, mix_seed(self.seed, &[0]))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        for task in [Task::Classify, Task::Weigh] {
            let t = self.task(task);
            t.train.validate()?;
            LayerSpec::validate_stack(&t.layers)?;
            let head = t.layers.last().expect("validated stack has a head");
            let ok = match task {
                Task::Classify => head.kind == crate::nn::LayerKind::DenseSoftmax && head.units == N_MATERIALS,
                Task::Weigh => head.kind == crate::nn::LayerKind::DenseLinear,
            };
            if !ok {
                return Err(ExperimentError::InvalidConfig(format!(
                    "{} network must end in a {} head",
                    task.name(),
                    match task {
                        Task::Classify => "10-unit softmax",
                        Task::Weigh => "1-unit linear",
                    }
                )));
            }
        }
        Ok(())
    }
}

/// Per-sample targets, from a manifest or built by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl LabeledFeatures {
    pub fn from_manifest(manifest: &DatasetManifest) -> Self {
        Self {
            labels: manifest.entries.iter().map(|e| e.label()).collect(),
            weights: manifest.entries.iter().map(|e| e.weight_g).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: usize,
    pub task: Task,
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub matrix: ConfusionMatrix,
    /// Mean of the per-split accuracies.
    pub accuracy: f64,
    pub counts: Vec<ConfusionCounts>,
    pub per_split: Vec<SplitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub report: RegressionReport,
    pub per_split: Vec<SplitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub n_samples: usize,
    pub n_splits: usize,
    pub classification: Option<ClassificationResult>,
    pub regression: Option<RegressionResult>,
}

fn examples<'a>(features: &'a [MfccSequence], ids: &[usize], target: impl Fn(usize) -> Target) -> Vec<Example<'a>> {
    ids.iter().map(|&i| Example { features: &features[i], target: target(i) }).collect()
}

/// Trains one split's model. Initialization and shuffling seeds derive from
/// `seed` and the split index only.
fn train_split(
    features: &[MfccSequence],
    target: impl Fn(usize) -> Target + Copy,
    split: &Split,
    split_idx: usize,
    config: &TaskConfig,
    seed: u64,
) -> Result<(NetworkModel, TrainHistory), ExperimentError> {
    let width = features
        .first()
        .map(MfccSequence::n_coeffs)
        .ok_or_else(|| ExperimentError::InvalidConfig("no features".into()))?;
    let mut model = init_model(&config.layers, width, mix_seed(seed, &[split_idx as u64, 1]))?;
    let train_set = examples(features, &split.train, target);
    let val_set = examples(features, split.validation_ids(), target);
    if config.standardize {
        model.set_input_scaler(Standardizer::fit(train_set.iter().map(|e| e.features)))?;
        if model.head().units == 1 {
            model.set_target_scale(TargetScale::fit(train_set.iter().filter_map(|e| match e.target {
                Target::Value(v) => Some(v),
                Target::Class(_) => None,
            })));
        }
    }
    let train_config = TrainConfig { seed: mix_seed(seed, &[split_idx as u64, 2]), ..config.train.clone() };
    Ok(train(model, &train_set, &val_set, &train_config)?)
}

/// Confusion counts per split from an arbitrary predictor
/// `predict(split, sample)`.
pub fn evaluate_classifier(
    plan: &SplitPlan,
    labels: &[usize],
    n_classes: usize,
    predict: impl Fn(usize, usize) -> Result<usize, ExperimentError>,
) -> Result<Vec<ConfusionCounts>, ExperimentError> {
    plan.splits
        .iter()
        .enumerate()
        .map(|(s, split)| {
            let mut c = ConfusionCounts::new(n_classes);
            for &i in &split.test {
                c.record(labels[i], predict(s, i)?);
            }
            Ok(c)
        })
        .collect()
}

/// Per-split, per-group absolute errors of an arbitrary regressor, folded
/// into a report. `groups[i]` indexes `group_names`.
pub fn evaluate_regressor(
    plan: &SplitPlan,
    weights: &[f64],
    groups: &[usize],
    group_names: &[String],
    predict: impl Fn(usize, usize) -> Result<f64, ExperimentError>,
) -> Result<(RegressionReport, Vec<f64>), ExperimentError> {
    let n_groups = group_names.len();
    let mut group_mae: Vec<Vec<f64>> = vec![Vec::new(); n_groups];
    let mut split_mae = Vec::with_capacity(plan.len());
    for (s, split) in plan.splits.iter().enumerate() {
        let mut sums = vec![(0.0, 0usize); n_groups];
        let mut total = 0.0;
        for &i in &split.test {
            let err = (predict(s, i)? - weights[i]).abs();
            sums[groups[i]].0 += err;
            sums[groups[i]].1 += 1;
            total += err;
        }
        split_mae.push(total / split.test.len() as f64);
        for (g, (sum, n)) in sums.into_iter().enumerate() {
            if n > 0 {
                group_mae[g].push(sum / n as f64);
            }
        }
    }
    let rows: Vec<(String, f64, f64)> = (0..n_groups)
        .filter(|&g| !group_mae[g].is_empty())
        .map(|g| {
            let members: Vec<f64> = (0..weights.len()).filter(|&i| groups[i] == g).map(|i| weights[i]).collect();
            let mean_weight = members.iter().sum::<f64>() / members.len() as f64;
            let mae = group_mae[g].iter().sum::<f64>() / group_mae[g].len() as f64;
            (group_names[g].clone(), mean_weight, mae)
        })
        .collect();
    let overall = split_mae.iter().sum::<f64>() / split_mae.len().max(1) as f64;
    let report = RegressionReport::from_rows(&rows, overall, mean_baseline(weights, plan));
    Ok((report, split_mae))
}

fn check_len(features: &[MfccSequence], labels: &LabeledFeatures, plan: &SplitPlan) -> Result<(), ExperimentError> {
    if features.len() != labels.len() || plan.n_samples != labels.len() {
        return Err(ExperimentError::InvalidConfig(format!(
            "{} feature sequences, {} labels, split plan over {} samples",
            features.len(),
            labels.len(),
            plan.n_samples
        )));
    }
    Ok(())
}

fn history_metrics(split: usize, task: Task, h: &TrainHistory) -> SplitMetrics {
    SplitMetrics {
        split,
        task,
        accuracy: None,
        mae: None,
        epochs: h.epochs.len(),
        best_epoch: h.best_epoch,
        best_val_loss: h.best().map_or(f64::NAN, |e| e.val_loss),
    }
}

/// A model trained on one split, with its training history.
#[derive(Debug, Clone)]
pub struct TrainedSplit {
    pub model: NetworkModel,
    pub history: TrainHistory,
}

/// Trains one model per split for `task`.
pub fn train_splits(
    features: &[MfccSequence],
    labels: &LabeledFeatures,
    plan: &SplitPlan,
    task: Task,
    config: &TaskConfig,
    seed: u64,
) -> Result<Vec<TrainedSplit>, ExperimentError> {
    check_len(features, labels, plan)?;
    plan.splits
        .par_iter()
        .enumerate()
        .map(|(s, split)| {
            let (model, history) = match task {
                Task::Classify => train_split(features, |i| Target::Class(labels.labels[i]), split, s, config, seed),
                Task::Weigh => train_split(features, |i| Target::Value(labels.weights[i]), split, s, config, seed),
            }?;
            Ok(TrainedSplit { model, history })
        })
        .collect()
}

/// Evaluates per-split classifiers on the test ids of each split.
pub fn score_classification(
    trained: &[TrainedSplit],
    features: &[MfccSequence],
    labels: &LabeledFeatures,
    plan: &SplitPlan,
    averaging: Averaging,
) -> Result<ClassificationResult, ExperimentError> {
    check_len(features, labels, plan)?;
    let counts = evaluate_classifier(plan, &labels.labels, N_MATERIALS, |s, i| {
        trained[s]
            .model
            .forward(&features[i])?
            .predicted_class()
            .ok_or_else(|| ExperimentError::InvalidConfig("classifier produced no class".into()))
    })?;
    let per_split: Vec<SplitMetrics> = trained
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(s, (t, c))| SplitMetrics {
            accuracy: Some(c.accuracy()),
            ..history_metrics(s, Task::Classify, &t.history)
        })
        .collect();
    let accuracy = per_split.iter().filter_map(|m| m.accuracy).sum::<f64>() / per_split.len() as f64;
    Ok(ClassificationResult { matrix: average_confusion(&counts, averaging), accuracy, counts, per_split })
}

/// Evaluates per-split regressors on the test ids of each split.
pub fn score_regression(
    trained: &[TrainedSplit],
    features: &[MfccSequence],
    labels: &LabeledFeatures,
    plan: &SplitPlan,
) -> Result<RegressionResult, ExperimentError> {
    check_len(features, labels, plan)?;
    let names: Vec<String> = Material::ALL.iter().map(|m| m.name().to_string()).collect();
    let (report, split_mae) =
        evaluate_regressor(plan, &labels.weights, &labels.labels, &names, |s, i| {
            match trained[s].model.forward(&features[i])? {
                Output::Value(v) => Ok(v),
                Output::Probabilities(_) => Err(ExperimentError::InvalidConfig("regressor has a softmax head".into())),
            }
        })?;
    let per_split = trained
        .iter()
        .zip(split_mae)
        .enumerate()
        .map(|(s, (t, mae))| SplitMetrics { mae: Some(mae), ..history_metrics(s, Task::Weigh, &t.history) })
        .collect();
    Ok(RegressionResult { report, per_split })
}

/// Trains and evaluates a classifier on every split.
pub fn run_classification(
    features: &[MfccSequence],
    labels: &LabeledFeatures,
    plan: &SplitPlan,
    config: &TaskConfig,
    averaging: Averaging,
    seed: u64,
) -> Result<ClassificationResult, ExperimentError> {
    let trained = train_splits(features, labels, plan, Task::Classify, config, seed)?;
    score_classification(&trained, features, labels, plan, averaging)
}

/// Trains and evaluates a weight regressor on every split.
pub fn run_regression(
    features: &[MfccSequence],
    labels: &LabeledFeatures,
    plan: &SplitPlan,
    config: &TaskConfig,
    seed: u64,
) -> Result<RegressionResult, ExperimentError> {
    let trained = train_splits(features, labels, plan, Task::Weigh, config, seed)?;
    score_regression(&trained, features, labels, plan)
}

/// Seed of the models for `task` under a protocol seed.
pub fn task_seed(protocol_seed: u64, task: Task) -> u64 {
    mix_seed(protocol_seed, &[1 + task as u64])
}

/// The full protocol on a set of clips: features, splits, the requested
/// tasks. Splits depend only on the seed and the number of clips.
pub fn run_protocol(
    clips: &[AudioClip],
    labels: &LabeledFeatures,
    config: &ExperimentConfig,
    tasks: &[Task],
) -> Result<ProtocolReport, ExperimentError> {
    config.validate()?;
    let plan = config.splits(labels.len())?;
    let mut report =
        ProtocolReport { n_samples: labels.len(), n_splits: plan.len(), classification: None, regression: None };
    for &task in tasks {
        let tc = config.task(task);
        let features = extract_features(clips, &tc.mfcc, config.channels)?;
        let seed = task_seed(config.seed, task);
        match task {
            Task::Classify => {
                report.classification = Some(run_classification(&features, labels, &plan, tc, config.averaging, seed)?)
            }
            Task::Weigh => report.regression = Some(run_regression(&features, labels, &plan, tc, seed)?),
        }
    }
    Ok(report)
}
