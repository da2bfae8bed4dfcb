use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{backward, mean_loss};
use super::loss::LossKind;
use super::model::{Example, NetworkModel};
use super::optim::{clip_gradient_norm, Adam};
use super::NnError;

/// Which loss the early-stopping rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    #[default]
    Validation,
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Consecutive epochs without strict improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm cap on each batch gradient; `None` disables clipping.
    pub gradient_clip: Option<f64>,
    pub seed: u64,
    pub monitor: Monitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            patience: 2,
            max_epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            gradient_clip: Some(5.0),
            seed: 0,
            monitor: Monitor::Validation,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if matches!(self.gradient_clip, Some(c) if !(c > 0.0)) {
            return bad("gradient_clip must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,seconds` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.9},{:.9},{:.3}\n", e.epoch, e.train_loss, e.val_loss, e.seconds));
        }
        out
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }
}

/// Mini-batch training with early stopping on the validation loss. Returns
/// the parameters from the best epoch.
pub fn train(
    model: NetworkModel,
    train_set: &[Example],
    validation_set: &[Example],
    config: &TrainConfig,
) -> Result<(NetworkModel, TrainHistory), NnError> {
    if validation_set.is_empty() && config.monitor == Monitor::Validation {
        return Err(NnError::EmptyDataset);
    }
    let kind = loss_kind(&model)?;
    train_with_validator(model, train_set, config, |m| {
        if validation_set.is_empty() {
            Ok(f64::NAN)
        } else {
            mean_loss(m, validation_set, kind)
        }
    })
}

fn loss_kind(model: &NetworkModel) -> Result<LossKind, NnError> {
    LossKind::for_head(model.head().kind).ok_or_else(|| NnError::InvalidSpec("model has no head".into()))
}

/// Training loop with a caller-supplied validation loss, evaluated after
/// each epoch on the current parameters.
pub fn train_with_validator<F>(
    mut model: NetworkModel,
    train_set: &[Example],
    config: &TrainConfig,
    mut validate: F,
) -> Result<(NetworkModel, TrainHistory), NnError>
where
    F: FnMut(&NetworkModel) -> Result<f64, NnError>,
{
    config.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let kind = loss_kind(&model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt =
        Adam::new(model.n_params(), config.learning_rate).with_moments(config.beta1, config.beta2, config.epsilon);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best_params = model.params().to_vec();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i]));
            let (mut grads, loss) = backward(&model, &batch, kind)?;
            if let Some(max) = config.gradient_clip {
                clip_gradient_norm(&mut grads, max);
            }
            opt.step(model.params_mut(), &grads);
            total += loss * idx.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = validate(&model)?;
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss, seconds: started.elapsed().as_secs_f64() });

        let watched = match config.monitor {
            Monitor::Validation => val_loss,
            Monitor::Training => train_loss,
        };
        if watched < best_loss {
            best_loss = watched;
            best_params.copy_from_slice(model.params());
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if history.best_epoch == 0 {
        // Nothing ever improved on +inf (NaN losses); keep the last state.
        history.best_epoch = history.epochs.len();
        best_params.copy_from_slice(model.params());
    }
    model.set_params(best_params)?;
    Ok((model, history))
}
