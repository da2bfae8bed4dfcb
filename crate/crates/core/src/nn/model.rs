use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{run_layer, CellParams};
use super::linalg::matvec_add;
use super::loss::{softmax, Output, Target};
use super::spec::{CellKind, LayerKind, LayerSpec};
use super::{shape_err, NnError};
use crate::mfcc::MfccSequence;

/// Per-feature affine standardization applied to every input frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits column means and standard deviations over every frame of
    /// every sequence. Near-constant columns get unit scale.
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a MfccSequence>) -> Option<Self> {
        let mut width = None;
        let mut count = 0usize;
        let mut sum = Vec::new();
        let mut sq = Vec::new();
        for seq in sequences {
            let w = *width.get_or_insert(seq.n_coeffs());
            if sum.is_empty() {
                sum = vec![0.0; w];
                sq = vec![0.0; w];
            }
            for frame in seq.frames() {
                for (k, v) in frame.iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return None;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Some(Self { mean, std })
    }

    fn apply(&self, frame: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (frame[k] - self.mean[k]) / self.std[k];
        }
    }
}

/// Affine map from the raw linear-head output to target units:
/// `value = mean + std · raw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 } })
    }
}

/// One labelled training or evaluation sequence.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a MfccSequence,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Slot {
    pub kind: LayerKind,
    pub input: usize,
    pub units: usize,
    pub offset: usize,
}

impl Slot {
    pub fn rows(&self) -> usize {
        match self.kind.cell() {
            Some(c) => c.gates() * self.units,
            None => self.units,
        }
    }

    pub fn w_len(&self) -> usize {
        self.rows() * self.input
    }

    pub fn u_len(&self) -> usize {
        if self.kind.is_head() {
            0
        } else {
            self.rows() * self.units
        }
    }

    pub fn len(&self) -> usize {
        self.w_len() + self.u_len() + self.rows()
    }

    /// `(w, u, b)` ranges within the flat parameter vector.
    pub fn ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
        let w = self.offset..self.offset + self.w_len();
        let u = w.end..w.end + self.u_len();
        let b = u.end..u.end + self.rows();
        (w, u, b)
    }
}

pub(crate) fn layout(spec: &[LayerSpec], input_width: usize) -> Vec<Slot> {
    let mut slots = Vec::with_capacity(spec.len());
    let (mut input, mut offset) = (input_width, 0);
    for l in spec {
        let slot = Slot { kind: l.kind, input, units: l.units, offset };
        offset += slot.len();
        input = l.units;
        slots.push(slot);
    }
    slots
}

/// A recurrent stack with a dense head and all its learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    spec: Vec<LayerSpec>,
    input_width: usize,
    params: Vec<f64>,
    slots: Vec<Slot>,
    input_scaler: Option<Standardizer>,
    target_scale: Option<TargetScale>,
    feature_digest: Option<String>,
}

/// Fan-scaled uniform weights, zero biases, LSTM forget-gate bias 1.
pub fn init_model(spec: &[LayerSpec], input_width: usize, seed: u64) -> Result<NetworkModel, NnError> {
    let mut model = NetworkModel::zeros(spec, input_width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for slot in model.slots.clone() {
        let (w, u, b) = slot.ranges();
        let limit_w = (6.0 / (slot.input + slot.units) as f64).sqrt();
        for p in &mut model.params[w] {
            *p = rng.random_range(-limit_w..limit_w);
        }
        let limit_u = (6.0 / (2 * slot.units) as f64).sqrt();
        for p in &mut model.params[u] {
            *p = rng.random_range(-limit_u..limit_u);
        }
        if slot.kind == LayerKind::Lstm {
            let n = slot.units;
            model.params[b][n..2 * n].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Ok(model)
}

impl NetworkModel {
    /// A model of the given shape with every parameter zero.
    pub fn zeros(spec: &[LayerSpec], input_width: usize) -> Result<Self, NnError> {
        LayerSpec::validate_stack(spec)?;
        if input_width == 0 {
            return Err(NnError::InvalidSpec("input width must be positive".into()));
        }
        let slots = layout(spec, input_width);
        let n = slots.last().map_or(0, |s| s.offset + s.len());
        Ok(Self {
            spec: spec.to_vec(),
            input_width,
            params: vec![0.0; n],
            slots,
            input_scaler: None,
            target_scale: None,
            feature_digest: None,
        })
    }

    pub fn spec(&self) -> &[LayerSpec] {
        &self.spec
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn head(&self) -> LayerSpec {
        *self.spec.last().expect("validated spec has a head")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(shape_err(format!("model has {} parameters, got {}", self.params.len(), params.len())));
        }
        self.params = params;
        Ok(())
    }

    pub fn input_scaler(&self) -> Option<&Standardizer> {
        self.input_scaler.as_ref()
    }

    pub fn set_input_scaler(&mut self, scaler: Option<Standardizer>) -> Result<(), NnError> {
        if let Some(s) = &scaler {
            if s.mean.len() != self.input_width || s.std.len() != self.input_width {
                return Err(shape_err("standardizer width differs from the model input width"));
            }
        }
        self.input_scaler = scaler;
        Ok(())
    }

    pub fn target_scale(&self) -> Option<TargetScale> {
        self.target_scale
    }

    pub fn set_target_scale(&mut self, scale: Option<TargetScale>) {
        self.target_scale = scale;
    }

    /// Digest of the feature configuration the model was trained on.
    pub fn feature_digest(&self) -> Option<&str> {
        self.feature_digest.as_deref()
    }

    pub fn set_feature_digest(&mut self, digest: Option<String>) {
        self.feature_digest = digest;
    }

    pub(crate) fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub(crate) fn cell_params(&self, layer: usize) -> CellParams<'_> {
        let slot = &self.slots[layer];
        let (w, u, b) = slot.ranges();
        let kind = slot.kind.cell().expect("recurrent layer");
        CellParams::new(kind, slot.input, slot.units, &self.params[w], &self.params[u], &self.params[b])
            .expect("layout is consistent")
    }

    /// Checks the feature width and returns the (standardized) input frames.
    pub(crate) fn prepare_input(&self, features: &MfccSequence) -> Result<Vec<f64>, NnError> {
        if features.n_frames() == 0 {
            return Err(NnError::EmptySequence);
        }
        if features.n_coeffs() != self.input_width {
            return Err(shape_err(format!(
                "model expects {} features per frame, got {}",
                self.input_width,
                features.n_coeffs()
            )));
        }
        Ok(match &self.input_scaler {
            None => features.as_slice().to_vec(),
            Some(s) => {
                let mut out = vec![0.0; features.as_slice().len()];
                for (src, dst) in features.frames().zip(out.chunks_exact_mut(self.input_width)) {
                    s.apply(src, dst);
                }
                out
            }
        })
    }

    /// Raw head activations (logits or unscaled value) for a final state.
    pub(crate) fn head_raw(&self, last: &[f64]) -> Vec<f64> {
        let slot = self.slots.last().expect("head");
        let (w, _, b) = slot.ranges();
        let mut out = self.params[b].to_vec();
        matvec_add(&self.params[w], last, &mut out);
        out
    }

    pub(crate) fn finish(&self, mut raw: Vec<f64>) -> Output {
        match self.head().kind {
            LayerKind::DenseSoftmax => {
                softmax(&mut raw);
                Output::Probabilities(raw)
            }
            _ => {
                let v = raw[0];
                Output::Value(match self.target_scale {
                    Some(s) => s.mean + s.std * v,
                    None => v,
                })
            }
        }
    }

    /// Runs the recurrent stack from zero state over every frame and applies
    /// the head to the last frame's top-layer state.
    pub fn forward(&self, features: &MfccSequence) -> Result<Output, NnError> {
        let mut xs = self.prepare_input(features)?;
        let steps = features.n_frames();
        for layer in 0..self.slots.len() - 1 {
            xs = run_layer(&self.cell_params(layer), &xs, steps, false).states;
        }
        let units = self.slots[self.slots.len() - 2].units;
        Ok(self.finish(self.head_raw(&xs[(steps - 1) * units..])))
    }

    /// Target-consistency check shared by the loss paths.
    pub fn check_target(&self, target: &Target) -> Result<(), NnError> {
        match (self.head().kind, target) {
            (LayerKind::DenseSoftmax, Target::Class(c)) if *c < self.head().units => Ok(()),
            (LayerKind::DenseSoftmax, Target::Class(c)) => {
                Err(shape_err(format!("class {c} outside {} outputs", self.head().units)))
            }
            (LayerKind::DenseLinear, Target::Value(v)) if v.is_finite() => Ok(()),
            (kind, t) => Err(shape_err(format!("target {t:?} does not fit a {kind:?} head"))),
        }
    }

    /// Recurrent cell kinds, bottom to top.
    pub fn cells(&self) -> Vec<CellKind> {
        self.spec.iter().filter_map(|l| l.kind.cell()).collect()
    }
}
