//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid
//! by command-line flags. The resolved value is what gets echoed as
//! `config.toml` into every output directory.

use std::path::Path;

use rattle::experiments::{noise_grid, ExperimentConfig, NoiseTarget, SearchSpace, Task};
use rattle::synth::GeneratorConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub max_gain: f64,
    pub step: f64,
    /// Also evaluate gain 1.0 (pure noise) after the grid.
    pub include_full_noise: bool,
    pub target: NoiseTarget,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self { max_gain: 0.5, step: 0.05, include_full_noise: true, target: NoiseTarget::Both }
    }
}

impl SweepSettings {
    pub fn gains(&self) -> Result<Vec<f64>, String> {
        let mut gains = noise_grid(self.max_gain, self.step).map_err(|e| e.to_string())?;
        if self.include_full_noise && gains.last() != Some(&1.0) {
            gains.push(1.0);
        }
        Ok(gains)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub budget: usize,
    pub eval_splits: usize,
    pub classify: SearchSpace,
    pub weigh: SearchSpace,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            budget: 20,
            eval_splits: 1,
            classify: SearchSpace::for_task(Task::Classify),
            weigh: SearchSpace::for_task(Task::Weigh),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for generation, splits, initialization and noise pairing.
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub generator: GeneratorConfig,
    pub experiment: ExperimentConfig,
    pub sweep: SweepSettings,
    pub search: SearchSettings,
}

impl RunConfig {
    pub fn desk_scale() -> Self {
        Self { generator: GeneratorConfig::desk_scale(), experiment: ExperimentConfig::desk_scale(), ..Self::default() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serializes")
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Overlays the TOML text on `base`. Unknown keys are errors.
pub fn overlay(base: &RunConfig, text: &str) -> Result<RunConfig, String> {
    let overlay: toml::Value = toml::from_str(text).map_err(|e| e.to_string())?;
    let mut value = toml::Value::try_from(base).map_err(|e| e.to_string())?;
    merge(&mut value, overlay);
    value.try_into().map_err(|e: toml::de::Error| e.to_string())
}

pub fn load(base: &RunConfig, path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    overlay(base, &text).map_err(|e| format!("{}: {e}", path.display()))
}
