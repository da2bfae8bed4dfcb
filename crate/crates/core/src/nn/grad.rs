use rayon::prelude::*;

use super::cell::{backprop_layer, run_layer, CellGrads, LayerTrace};
use super::linalg::{matvec_t_add, outer_add};
use super::loss::{log_sum_exp, softmax, LossKind, Target};
use super::model::{Example, NetworkModel};
use super::NnError;

/// Batch elements per gradient work unit. Fixed so the reduction order, and
/// therefore every bit of the result, is independent of the thread count.
const CHUNK: usize = 4;

/// Gradient of the mean batch loss with respect to every parameter, by full
/// backpropagation through time. Returns `(gradient, mean loss)`; the
/// gradient is laid out like [`NetworkModel::params`].
pub fn backward(model: &NetworkModel, batch: &[Example], kind: LossKind) -> Result<(Vec<f64>, f64), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let head = model.head().kind;
    if LossKind::for_head(head) != Some(kind) {
        return Err(NnError::LossMismatch { loss: kind, head });
    }
    let partials: Vec<Result<(Vec<f64>, f64), NnError>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = vec![0.0; model.n_params()];
            let mut total = 0.0;
            for ex in chunk {
                total += accumulate(model, ex, &mut grads)?;
            }
            Ok((grads, total))
        })
        .collect();

    let mut grads = vec![0.0; model.n_params()];
    let mut total = 0.0;
    for part in partials {
        let (g, l) = part?;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
        total += l;
    }
    let n = batch.len() as f64;
    grads.iter_mut().for_each(|g| *g /= n);
    Ok((grads, total / n))
}

/// Adds one sequence's loss gradient into `grads`; returns its loss.
fn accumulate(model: &NetworkModel, ex: &Example, grads: &mut [f64]) -> Result<f64, NnError> {
    model.check_target(&ex.target)?;
    let steps = ex.features.n_frames();
    let input = model.prepare_input(ex.features)?;
    let slots = model.slots();
    let n_rec = slots.len() - 1;

    let mut traces: Vec<LayerTrace> = Vec::with_capacity(n_rec);
    for layer in 0..n_rec {
        let xs = if layer == 0 { &input } else { &traces[layer - 1].states };
        let trace = run_layer(&model.cell_params(layer), xs, steps, true);
        traces.push(trace);
    }
    let top_units = slots[n_rec - 1].units;
    let last = &traces[n_rec - 1].states[(steps - 1) * top_units..];
    let mut raw = model.head_raw(last);

    // Loss and gradient with respect to the raw head activations.
    let loss = match ex.target {
        Target::Class(c) => {
            let l = log_sum_exp(&raw) - raw[c];
            softmax(&mut raw);
            raw[c] -= 1.0;
            l
        }
        Target::Value(t) => {
            let (mean, std) = model.target_scale().map_or((0.0, 1.0), |s| (s.mean, s.std));
            let y = mean + std * raw[0];
            raw[0] = 2.0 * (y - t) * std;
            (y - t).powi(2)
        }
    };
    let d_raw = raw;

    let head = &slots[n_rec];
    let (hw, _, hb) = head.ranges();
    outer_add(&mut grads[hw.clone()], &d_raw, last);
    for (g, d) in grads[hb].iter_mut().zip(&d_raw) {
        *g += d;
    }

    let mut d_states = vec![0.0; steps * top_units];
    matvec_t_add(&model.params()[hw], &d_raw, &mut d_states[(steps - 1) * top_units..]);

    for layer in (0..n_rec).rev() {
        let slot = &slots[layer];
        let (w, u, b) = slot.ranges();
        let xs = if layer == 0 { &input } else { &traces[layer - 1].states };
        let mut d_inputs = if layer > 0 { Some(vec![0.0; steps * slot.input]) } else { None };
        // The three ranges are disjoint and ordered w < u < b.
        let (gw, rest) = grads[w.start..b.end].split_at_mut(w.len());
        let (gu, gb) = rest.split_at_mut(u.len());
        let mut cell_grads = CellGrads { w: gw, u: gu, b: gb };
        backprop_layer(
            &model.cell_params(layer),
            xs,
            steps,
            &traces[layer],
            &d_states,
            &mut cell_grads,
            d_inputs.as_deref_mut(),
        );
        if let Some(d) = d_inputs {
            d_states = d;
        }
    }
    Ok(loss)
}

/// Mean loss of the model over a set of examples, evaluated in parallel
/// with an order-fixed reduction.
pub(crate) fn mean_loss(model: &NetworkModel, set: &[Example], kind: LossKind) -> Result<f64, NnError> {
    if set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let losses: Vec<Result<f64, NnError>> = set
        .par_iter()
        .map(|ex| {
            model.check_target(&ex.target)?;
            super::loss::loss(&model.forward(ex.features)?, &ex.target, kind)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / set.len() as f64)
}
