use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{task_seed, train_splits, ExperimentConfig, LabeledFeatures, TaskConfig};
use super::{ExperimentError, Task};
use crate::audio::AudioClip;
use crate::features::extract_features;
use crate::nn::{CellKind, LayerSpec};
use crate::synth::N_MATERIALS;

/// Ranges sampled by [`random_search`]. Integer ranges are inclusive; the
/// learning rate is drawn log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub task: Task,
    pub cells: Vec<CellKind>,
    pub layer1_units: [usize; 2],
    pub layer2_units: [usize; 2],
    pub n_coeffs: [usize; 2],
    pub learning_rate: [f64; 2],
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::for_task(Task::Classify)
    }
}

impl SearchSpace {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            cells: vec![CellKind::Gru, CellKind::Lstm, CellKind::Srn],
            layer1_units: [300, 700],
            layer2_units: [50, 100],
            n_coeffs: [13, 30],
            learning_rate: [1e-4, 1e-2],
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let empty = |m: &str| Err(ExperimentError::EmptySpace(m.to_string()));
        if self.cells.is_empty() {
            return empty("no cell kinds");
        }
        for (name, [lo, hi]) in
            [("layer1_units", self.layer1_units), ("layer2_units", self.layer2_units), ("n_coeffs", self.n_coeffs)]
        {
            if lo == 0 || lo > hi {
                return empty(&format!("{name} range [{lo}, {hi}]"));
            }
        }
        let [lo, hi] = self.learning_rate;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return empty(&format!("learning_rate range [{lo}, {hi}]"));
        }
        Ok(())
    }

    pub fn contains(&self, cell: CellKind, layer1: usize, layer2: usize, n_coeffs: usize, learning_rate: f64) -> bool {
        let within = |v: usize, [lo, hi]: [usize; 2]| (lo..=hi).contains(&v);
        self.cells.contains(&cell)
            && within(layer1, self.layer1_units)
            && within(layer2, self.layer2_units)
            && within(n_coeffs, self.n_coeffs)
            && (self.learning_rate[0]..=self.learning_rate[1]).contains(&learning_rate)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (CellKind, usize, usize, usize, f64) {
        let cell = self.cells[rng.random_range(0..self.cells.len())];
        let l1 = rng.random_range(self.layer1_units[0]..=self.layer1_units[1]);
        let l2 = rng.random_range(self.layer2_units[0]..=self.layer2_units[1]);
        let nc = rng.random_range(self.n_coeffs[0]..=self.n_coeffs[1]);
        let [lo, hi] = self.learning_rate;
        let lr = if lo == hi { lo } else { (rng.random_range(lo.ln()..hi.ln())).exp() };
        (cell, l1, l2, nc, lr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Sampling order.
    pub index: usize,
    pub cell: CellKind,
    pub layer1_units: usize,
    pub layer2_units: usize,
    pub n_coeffs: usize,
    pub learning_rate: f64,
    /// Mean best validation loss over the evaluation splits.
    pub val_loss: f64,
}

impl Trial {
    pub fn layers(&self, task: Task) -> Vec<LayerSpec> {
        match task {
            Task::Classify => LayerSpec::classifier(self.cell, self.layer1_units, self.layer2_units, N_MATERIALS),
            Task::Weigh => LayerSpec::regressor(self.cell, self.layer1_units, self.layer2_units),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Trial,
    /// Every trial, lowest validation loss first.
    pub leaderboard: Vec<Trial>,
}

/// Samples `budget` configurations and trains each on the first
/// `eval_splits` splits of `base`. Non-finite losses rank last.
pub fn random_search(
    clips: &[AudioClip],
    labels: &LabeledFeatures,
    space: &SearchSpace,
    base: &ExperimentConfig,
    budget: usize,
    eval_splits: usize,
    seed: u64,
) -> Result<SearchResult, ExperimentError> {
    space.validate()?;
    if budget == 0 || eval_splits == 0 {
        return Err(ExperimentError::InvalidConfig("budget and eval_splits must be at least 1".into()));
    }
    let plan = base.splits(labels.len())?.truncated(eval_splits);
    let template = base.task(space.task);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = BTreeMap::new();
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let (cell, l1, l2, nc, lr) = space.sample(&mut rng);
        let mfcc = template.mfcc.clone().with_coeffs(nc);
        if let Entry::Vacant(slot) = features.entry(nc) {
            slot.insert(extract_features(clips, &mfcc, base.channels)?);
        }
        let mut trial = Trial {
            index,
            cell,
            layer1_units: l1,
            layer2_units: l2,
            n_coeffs: nc,
            learning_rate: lr,
            val_loss: f64::NAN,
        };
        let mut config = TaskConfig { layers: trial.layers(space.task), mfcc, ..template.clone() };
        config.train.learning_rate = lr;
        let trained =
            train_splits(&features[&nc], labels, &plan, space.task, &config, task_seed(base.seed, space.task))?;
        trial.val_loss = trained.iter().map(|t| t.history.best().map_or(f64::NAN, |e| e.val_loss)).sum::<f64>()
            / trained.len() as f64;
        trials.push(trial);
    }
    let key = |t: &Trial| if t.val_loss.is_finite() { t.val_loss } else { f64::INFINITY };
    trials.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.index.cmp(&b.index)));
    Ok(SearchResult { best: trials[0].clone(), leaderboard: trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize_corpus, GeneratorConfig, Material, MaterialProfile};

    #[test]
    fn default_space_holds_default_networks() {
        let c = SearchSpace::for_task(Task::Classify);
        assert!(c.contains(CellKind::Gru, 491, 99, 21, 1e-3));
        let r = SearchSpace::for_task(Task::Weigh);
        assert!(r.contains(CellKind::Lstm, 376, 69, 27, 1e-3));
    }

    #[test]
    fn empty_spaces_rejected() {
        let mut s = SearchSpace::default();
        s.cells.clear();
        assert!(matches!(s.validate(), Err(ExperimentError::EmptySpace(_))));
        let s = SearchSpace { layer1_units: [10, 5], ..SearchSpace::default() };
        assert!(matches!(s.validate(), Err(ExperimentError::EmptySpace(_))));
    }

    fn tiny() -> (Vec<AudioClip>, LabeledFeatures, ExperimentConfig, SearchSpace) {
        let gen = GeneratorConfig {
            profiles: vec![MaterialProfile::default_for(Material::Rice), MaterialProfile::default_for(Material::Stone)],
            weights: vec![vec![4.5], vec![10.8]],
            takes_per_capsule: 8,
            ..GeneratorConfig::default()
        };
        let corpus = synthesize_corpus(&gen, 2).unwrap();
        let labels = LabeledFeatures::from_manifest(&corpus.manifest);
        let mut base = ExperimentConfig::desk_scale();
        base.n_test = 4;
        base.classify.train.max_epochs = 2;
        let space =
            SearchSpace { layer1_units: [2, 5], layer2_units: [2, 3], n_coeffs: [8, 12], ..SearchSpace::default() };
        (corpus.clips, labels, base, space)
    }

    #[test]
    fn budget_one_returns_its_sample() {
        let (clips, labels, base, space) = tiny();
        let r = random_search(&clips, &labels, &space, &base, 1, 1, 5).unwrap();
        assert_eq!(r.leaderboard.len(), 1);
        assert_eq!(r.best, r.leaderboard[0]);
        let b = &r.best;
        assert!(space.contains(b.cell, b.layer1_units, b.layer2_units, b.n_coeffs, b.learning_rate));
    }

    #[test]
    fn best_has_minimum_loss() {
        let (clips, labels, base, space) = tiny();
        let r = random_search(&clips, &labels, &space, &base, 4, 1, 6).unwrap();
        assert_eq!(r.leaderboard.len(), 4);
        assert!(r.leaderboard.iter().all(|t| t.val_loss >= r.best.val_loss));
    }
}
