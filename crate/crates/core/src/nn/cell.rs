use super::linalg::{matvec_add, matvec_t_add, outer_add, sigmoid};
use super::spec::CellKind;
use super::{shape_err, NnError};

/// Borrowed weights of one recurrent layer. `w` is `gates·units × input`,
/// `u` is `gates·units × units`, `b` is `gates·units`, gate blocks stacked
/// row-wise in the order given by [`CellKind::gates`].
#[derive(Debug, Clone, Copy)]
pub struct CellParams<'a> {
    kind: CellKind,
    input: usize,
    units: usize,
    w: &'a [f64],
    u: &'a [f64],
    b: &'a [f64],
}

impl<'a> CellParams<'a> {
    pub fn new(
        kind: CellKind,
        input: usize,
        units: usize,
        w: &'a [f64],
        u: &'a [f64],
        b: &'a [f64],
    ) -> Result<Self, NnError> {
        let rows = kind.gates() * units;
        if w.len() != rows * input || u.len() != rows * units || b.len() != rows {
            return Err(shape_err(format!(
                "{kind:?} cell {input}->{units} needs W {}, U {}, b {}; got {}, {}, {}",
                rows * input,
                rows * units,
                rows,
                w.len(),
                u.len(),
                b.len()
            )));
        }
        Ok(Self { kind, input, units, w, u, b })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn units(&self) -> usize {
        self.units
    }

    fn rows(&self) -> usize {
        self.kind.gates() * self.units
    }

    fn check(&self, x: &[f64], h: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input || h.len() != self.units {
            return Err(shape_err(format!(
                "cell expects x of {} and h of {}, got {} and {}",
                self.input,
                self.units,
                x.len(),
                h.len()
            )));
        }
        Ok(())
    }

    /// `b + W x`, all gate blocks.
    fn input_affine(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.b.to_vec();
        matvec_add(self.w, x, &mut a);
        a
    }
}

/// Per-layer gradient buffers, shaped like [`CellParams`].
pub(crate) struct CellGrads<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

/// `h' = tanh(W x + U h + b)`.
pub fn srn_step(p: &CellParams, x: &[f64], h: &[f64]) -> Result<Vec<f64>, NnError> {
    p.check(x, h)?;
    if p.kind != CellKind::Srn {
        return Err(shape_err("srn_step on a non-SRN cell"));
    }
    let mut a = p.input_affine(x);
    matvec_add(p.u, h, &mut a);
    Ok(a.into_iter().map(f64::tanh).collect())
}

/// Standard GRU update:
/// `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
/// `h̃ = tanh(Wh x + Uh (r∘h) + bh)`, `h' = (1−z)∘h + z∘h̃`.
pub fn gru_step(p: &CellParams, x: &[f64], h: &[f64]) -> Result<Vec<f64>, NnError> {
    p.check(x, h)?;
    if p.kind != CellKind::Gru {
        return Err(shape_err("gru_step on a non-GRU cell"));
    }
    let mut gates = vec![0.0; p.rows()];
    let mut out = vec![0.0; p.units];
    let mut scratch = vec![0.0; p.units];
    let a = p.input_affine(x);
    gru_forward(p, &a, h, &mut gates, &mut out, &mut scratch);
    Ok(out)
}

/// Standard LSTM update with gates `i, f, o = σ(·)`, `g = tanh(·)`,
/// `c' = f∘c + i∘g`, `h' = o∘tanh(c')`. Returns `(h', c')`.
pub fn lstm_step(p: &CellParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    p.check(x, h)?;
    if p.kind != CellKind::Lstm {
        return Err(shape_err("lstm_step on a non-LSTM cell"));
    }
    if c.len() != p.units {
        return Err(shape_err(format!("cell state of {} for {} units", c.len(), p.units)));
    }
    let mut gates = vec![0.0; p.rows()];
    let (mut h_out, mut c_out, mut tc) = (vec![0.0; p.units], vec![0.0; p.units], vec![0.0; p.units]);
    let a = p.input_affine(x);
    lstm_forward(p, &a, h, c, &mut gates, &mut h_out, &mut c_out, &mut tc);
    Ok((h_out, c_out))
}

/// `a` holds `b + W x`; writes activated gates `[z, r, h̃]` and the new state.
fn gru_forward(p: &CellParams, a: &[f64], h: &[f64], gates: &mut [f64], out: &mut [f64], rh: &mut [f64]) {
    let n = p.units;
    gates.copy_from_slice(a);
    matvec_add(&p.u[..2 * n * n], h, &mut gates[..2 * n]);
    for g in &mut gates[..2 * n] {
        *g = sigmoid(*g);
    }
    for i in 0..n {
        rh[i] = gates[n + i] * h[i];
    }
    matvec_add(&p.u[2 * n * n..], rh, &mut gates[2 * n..]);
    for i in 0..n {
        let hc = gates[2 * n + i].tanh();
        gates[2 * n + i] = hc;
        let z = gates[i];
        out[i] = (1.0 - z) * h[i] + z * hc;
    }
}

#[allow(clippy::too_many_arguments)]
fn lstm_forward(
    p: &CellParams,
    a: &[f64],
    h: &[f64],
    c: &[f64],
    gates: &mut [f64],
    h_out: &mut [f64],
    c_out: &mut [f64],
    tc: &mut [f64],
) {
    let n = p.units;
    gates.copy_from_slice(a);
    matvec_add(p.u, h, gates);
    for (k, g) in gates.iter_mut().enumerate() {
        *g = if (2 * n..3 * n).contains(&k) { g.tanh() } else { sigmoid(*g) };
    }
    for i in 0..n {
        let (ig, fg, gg, og) = (gates[i], gates[n + i], gates[2 * n + i], gates[3 * n + i]);
        c_out[i] = fg * c[i] + ig * gg;
        tc[i] = c_out[i].tanh();
        h_out[i] = og * tc[i];
    }
}

/// Everything a layer's backward pass needs from its forward pass over a
/// whole sequence.
pub(crate) struct LayerTrace {
    pub states: Vec<f64>,
    gates: Vec<f64>,
    cells: Vec<f64>,
    cell_tanh: Vec<f64>,
}

/// Runs one recurrent layer over `steps` frames of `xs` (row-major,
/// `steps × input`) from a zero initial state.
pub(crate) fn run_layer(p: &CellParams, xs: &[f64], steps: usize, keep_trace: bool) -> LayerTrace {
    let (n, rows, inp) = (p.units, p.rows(), p.input);
    let mut states = vec![0.0; steps * n];
    let mut gates = vec![0.0; if keep_trace { steps * rows } else { rows }];
    let is_lstm = p.kind == CellKind::Lstm;
    let mut cells = vec![0.0; if is_lstm { steps * n } else { 0 }];
    let mut cell_tanh = vec![0.0; if is_lstm { steps * n } else { 0 }];
    let zeros = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut a = vec![0.0; rows];

    for t in 0..steps {
        a.copy_from_slice(p.b);
        matvec_add(p.w, &xs[t * inp..(t + 1) * inp], &mut a);
        let (before, rest) = states.split_at_mut(t * n);
        let h_prev = if t == 0 { &zeros[..] } else { &before[(t - 1) * n..] };
        let h_out = &mut rest[..n];
        let g = if keep_trace { &mut gates[t * rows..(t + 1) * rows] } else { &mut gates[..] };
        match p.kind {
            CellKind::Srn => {
                g.copy_from_slice(&a);
                matvec_add(p.u, h_prev, g);
                for (o, v) in h_out.iter_mut().zip(g.iter_mut()) {
                    *v = v.tanh();
                    *o = *v;
                }
            }
            CellKind::Gru => gru_forward(p, &a, h_prev, g, h_out, &mut scratch),
            CellKind::Lstm => {
                let (cb, cr) = cells.split_at_mut(t * n);
                let c_prev = if t == 0 { &zeros[..] } else { &cb[(t - 1) * n..] };
                lstm_forward(p, &a, h_prev, c_prev, g, h_out, &mut cr[..n], &mut cell_tanh[t * n..(t + 1) * n]);
            }
        }
    }
    LayerTrace { states, gates, cells, cell_tanh }
}

/// Backpropagation through time for one layer. `d_states` holds the loss
/// gradient arriving at each `h_t` from above (not from the recurrence).
/// Parameter gradients are accumulated into `grads`; when `d_inputs` is
/// given, the gradient with respect to each input frame is written there.
pub(crate) fn backprop_layer(
    p: &CellParams,
    xs: &[f64],
    steps: usize,
    trace: &LayerTrace,
    d_states: &[f64],
    grads: &mut CellGrads,
    mut d_inputs: Option<&mut [f64]>,
) {
    let (n, rows, inp) = (p.units, p.rows(), p.input);
    let zeros = vec![0.0; n];
    let mut carry_h = vec![0.0; n];
    let mut carry_c = vec![0.0; n];
    let mut dh = vec![0.0; n];
    let mut da = vec![0.0; rows];
    let mut drh = vec![0.0; n];
    let mut rh = vec![0.0; n];

    for t in (0..steps).rev() {
        let x = &xs[t * inp..(t + 1) * inp];
        let h_prev = if t == 0 { &zeros[..] } else { &trace.states[(t - 1) * n..t * n] };
        let g = &trace.gates[t * rows..(t + 1) * rows];
        for i in 0..n {
            dh[i] = d_states[t * n + i] + carry_h[i];
        }
        carry_h.iter_mut().for_each(|v| *v = 0.0);

        match p.kind {
            CellKind::Srn => {
                for i in 0..n {
                    da[i] = dh[i] * (1.0 - g[i] * g[i]);
                }
                outer_add(grads.u, &da, h_prev);
                matvec_t_add(p.u, &da, &mut carry_h);
            }
            CellKind::Gru => {
                let (z, r, hc) = (&g[..n], &g[n..2 * n], &g[2 * n..]);
                for i in 0..n {
                    let dz = dh[i] * (hc[i] - h_prev[i]);
                    let dhc = dh[i] * z[i];
                    carry_h[i] = dh[i] * (1.0 - z[i]);
                    da[2 * n + i] = dhc * (1.0 - hc[i] * hc[i]);
                    da[i] = dz * z[i] * (1.0 - z[i]);
                    rh[i] = r[i] * h_prev[i];
                }
                let uh = &p.u[2 * n * n..];
                drh.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_add(uh, &da[2 * n..], &mut drh);
                for i in 0..n {
                    da[n + i] = drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
                    carry_h[i] += drh[i] * r[i];
                }
                outer_add(&mut grads.u[..2 * n * n], &da[..2 * n], h_prev);
                outer_add(&mut grads.u[2 * n * n..], &da[2 * n..], &rh);
                matvec_t_add(&p.u[..2 * n * n], &da[..2 * n], &mut carry_h);
            }
            CellKind::Lstm => {
                let c_prev = if t == 0 { &zeros[..] } else { &trace.cells[(t - 1) * n..t * n] };
                let tc = &trace.cell_tanh[t * n..(t + 1) * n];
                for i in 0..n {
                    let (ig, fg, gg, og) = (g[i], g[n + i], g[2 * n + i], g[3 * n + i]);
                    let dc = carry_c[i] + dh[i] * og * (1.0 - tc[i] * tc[i]);
                    da[i] = dc * gg * ig * (1.0 - ig);
                    da[n + i] = dc * c_prev[i] * fg * (1.0 - fg);
                    da[2 * n + i] = dc * ig * (1.0 - gg * gg);
                    da[3 * n + i] = dh[i] * tc[i] * og * (1.0 - og);
                    carry_c[i] = dc * fg;
                }
                outer_add(grads.u, &da, h_prev);
                matvec_t_add(p.u, &da, &mut carry_h);
            }
        }
        outer_add(grads.w, &da, x);
        for (gb, d) in grads.b.iter_mut().zip(&da) {
            *gb += d;
        }
        if let Some(dx) = d_inputs.as_deref_mut() {
            let row = &mut dx[t * inp..(t + 1) * inp];
            row.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(p.w, &da, row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_cell(kind: CellKind, input: usize, units: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let rows = kind.gates() * units;
        (vec![0.0; rows * input], vec![0.0; rows * units], vec![0.0; rows])
    }

    fn random_cell(kind: CellKind, input: usize, units: usize, vals: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let rows = kind.gates() * units;
        let mut it = vals.iter().cycle().copied();
        let w = (0..rows * input).map(|_| it.next().unwrap()).collect();
        let u = (0..rows * units).map(|_| it.next().unwrap()).collect();
        let b = (0..rows).map(|_| it.next().unwrap()).collect();
        (w, u, b)
    }

    #[test]
    fn gru_zero_params_halves_state() {
        let (w, u, b) = zero_cell(CellKind::Gru, 3, 2);
        let p = CellParams::new(CellKind::Gru, 3, 2, &w, &u, &b).unwrap();
        assert_eq!(gru_step(&p, &[0.3, -2.0, 5.0], &[1.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(gru_step(&p, &[0.3, -2.0, 5.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn lstm_zero_params() {
        let (w, u, b) = zero_cell(CellKind::Lstm, 2, 1);
        let p = CellParams::new(CellKind::Lstm, 2, 1, &w, &u, &b).unwrap();
        let (h, c) = lstm_step(&p, &[1.0, 2.0], &[0.0], &[0.0]).unwrap();
        assert_eq!((h, c), (vec![0.0], vec![0.0]));
        let (h, c) = lstm_step(&p, &[1.0, 2.0], &[0.0], &[1.0]).unwrap();
        assert_eq!(c, vec![0.5]);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.2311).abs() < 1e-4);
    }

    #[test]
    fn shape_errors() {
        let (w, u, b) = zero_cell(CellKind::Gru, 3, 2);
        assert!(CellParams::new(CellKind::Gru, 3, 3, &w, &u, &b).is_err());
        let p = CellParams::new(CellKind::Gru, 3, 2, &w, &u, &b).unwrap();
        assert!(matches!(gru_step(&p, &[0.0; 2], &[0.0; 2]), Err(NnError::ShapeMismatch(_))));
        assert!(gru_step(&p, &[0.0; 3], &[0.0; 3]).is_err());
        assert!(lstm_step(&p, &[0.0; 3], &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn run_layer_matches_step_functions() {
        let vals: Vec<f64> = (0..97).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 1.5).collect();
        let xs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        for kind in [CellKind::Srn, CellKind::Gru, CellKind::Lstm] {
            let (w, u, b) = random_cell(kind, 3, 2, &vals);
            let p = CellParams::new(kind, 3, 2, &w, &u, &b).unwrap();
            let trace = run_layer(&p, &xs, 4, true);
            let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
            for t in 0..4 {
                let x = &xs[t * 3..t * 3 + 3];
                h = match kind {
                    CellKind::Srn => srn_step(&p, x, &h).unwrap(),
                    CellKind::Gru => gru_step(&p, x, &h).unwrap(),
                    CellKind::Lstm => {
                        let (h2, c2) = lstm_step(&p, x, &h, &c).unwrap();
                        c = c2;
                        h2
                    }
                };
                assert_eq!(&trace.states[t * 2..t * 2 + 2], &h[..]);
            }
        }
    }

    proptest! {
        #[test]
        fn gru_state_is_convex_combination(
            vals in prop::collection::vec(-3.0f64..3.0, 60),
            x in prop::collection::vec(-5.0f64..5.0, 3),
            h in prop::collection::vec(-0.999f64..0.999, 3),
        ) {
            let (w, u, b) = random_cell(CellKind::Gru, 3, 3, &vals);
            let p = CellParams::new(CellKind::Gru, 3, 3, &w, &u, &b).unwrap();
            let out = gru_step(&p, &x, &h).unwrap();
            // Recompute the candidate to bound each coordinate.
            let mut a = b.clone();
            matvec_add(&w, &x, &mut a);
            let mut gates = vec![0.0; 9];
            let mut o2 = vec![0.0; 3];
            let mut rh = vec![0.0; 3];
            gru_forward(&p, &a, &h, &mut gates, &mut o2, &mut rh);
            for i in 0..3 {
                prop_assert!(out[i] > -1.0 && out[i] < 1.0);
                let (lo, hi) = if h[i] < gates[6 + i] { (h[i], gates[6 + i]) } else { (gates[6 + i], h[i]) };
                prop_assert!(out[i] >= lo - 1e-15 && out[i] <= hi + 1e-15);
            }
        }

        #[test]
        fn lstm_output_bounded(
            vals in prop::collection::vec(-3.0f64..3.0, 50),
            x in prop::collection::vec(-5.0f64..5.0, 2),
            h in prop::collection::vec(-1.0f64..1.0, 3),
            c in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            let (w, u, b) = random_cell(CellKind::Lstm, 2, 3, &vals);
            let p = CellParams::new(CellKind::Lstm, 2, 3, &w, &u, &b).unwrap();
            let (h2, _) = lstm_step(&p, &x, &h, &c).unwrap();
            prop_assert!(h2.iter().all(|v| v.abs() < 1.0));
        }
    }
}
