use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentError;

/// What the early-stopping rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoldoutMode {
    /// The test holdout doubles as the validation set.
    #[default]
    Shared,
    /// A separate validation set of the same size is carved from training.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Empty in shared mode.
    pub validation: Vec<usize>,
}

impl Split {
    pub fn validation_ids(&self) -> &[usize] {
        if self.validation.is_empty() {
            &self.test
        } else {
            &self.validation
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub n_samples: usize,
    pub n_test: usize,
    pub mode: HoldoutMode,
    pub splits: Vec<Split>,
}

impl SplitPlan {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    /// The first `n` splits.
    pub fn truncated(&self, n: usize) -> SplitPlan {
        SplitPlan { splits: self.splits.iter().take(n).cloned().collect(), ..self.clone() }
    }
}

pub fn make_splits(n_samples: usize, n_splits: usize, n_test: usize, seed: u64) -> Result<SplitPlan, ExperimentError> {
    make_splits_with(n_samples, n_splits, n_test, HoldoutMode::Shared, seed)
}

/// Independent uniformly random holdouts. Index lists are sorted.
pub fn make_splits_with(
    n_samples: usize,
    n_splits: usize,
    n_test: usize,
    mode: HoldoutMode,
    seed: u64,
) -> Result<SplitPlan, ExperimentError> {
    let held = match mode {
        HoldoutMode::Shared => n_test,
        HoldoutMode::Separate => 2 * n_test,
    };
    if n_test == 0 || held >= n_samples {
        return Err(ExperimentError::TooFewSamples { n: n_samples, n_test });
    }
    if n_splits == 0 {
        return Err(ExperimentError::InvalidConfig("at least one split is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = (0..n_splits)
        .map(|_| {
            let mut ids: Vec<usize> = (0..n_samples).collect();
            ids.shuffle(&mut rng);
            let mut test = ids[..n_test].to_vec();
            let mut validation = ids[n_test..held].to_vec();
            let mut train = ids[held..].to_vec();
            test.sort_unstable();
            validation.sort_unstable();
            train.sort_unstable();
            Split { train, test, validation }
        })
        .collect();
    Ok(SplitPlan { seed, n_samples, n_test, mode, splits })
}
