use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Gate layout inside the fused weight matrix: input, forget, cell, output.
pub const GATES: usize = 4;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Keeps the previous state on rows whose mask is zero.
pub struct StepMask {
    keep_new: Var,
    keep_old: Var,
}

impl StepMask {
    /// `None` when every row is active, so callers can skip the blend.
    pub fn new(g: &mut Graph, col: &Tensor) -> Option<Self> {
        if col.data().iter().all(|&m| m == 1.0) {
            return None;
        }
        let inv = Tensor::new(col.shape().to_vec(), col.data().iter().map(|m| 1.0 - m).collect())
            .expect("mask complement");
        Some(StepMask {
            keep_new: g.constant(col.clone()),
            keep_old: g.constant(inv),
        })
    }

    pub fn blend(&self, g: &mut Graph, new: Var, old: Var) -> Result<Var> {
        let a = g.mul_col(new, self.keep_new)?;
        let b = g.mul_col(old, self.keep_old)?;
        g.add(a, b)
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.mul_col(x, self.keep_new)
    }
}

/// `(W, b)` for one LSTM, with `W: [input + hidden, 4 * hidden]`.
pub struct LstmParams {
    pub w: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmParams {
    pub fn load(g: &mut Graph, store: &ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let w = g.param(store, &format!("{prefix}.w"))?;
        let b = g.param(store, &format!("{prefix}.b"))?;
        let ws = g.value(w).shape();
        if ws != [input + hidden, GATES * hidden] {
            return Err(Error::Dimension {
                layer: prefix.to_string(),
                expected: input + hidden,
                got: ws.first().copied().unwrap_or(0),
            });
        }
        if g.value(b).numel() != GATES * hidden {
            return Err(Error::Dimension {
                layer: format!("{prefix}.b"),
                expected: GATES * hidden,
                got: g.value(b).numel(),
            });
        }
        Ok(LstmParams { w, b, hidden })
    }

    pub fn step(&self, g: &mut Graph, x: Var, state: &LstmState) -> Result<LstmState> {
        let xh = g.concat(&[x, state.h], 1)?;
        let z = g.matmul(xh, self.w)?;
        let z = g.add_row(z, self.b)?;
        let h = self.hidden;
        let i = g.slice(z, 1, 0, h)?;
        let f = g.slice(z, 1, h, h)?;
        let c_in = g.slice(z, 1, 2 * h, h)?;
        let o = g.slice(z, 1, 3 * h, h)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let c_in = g.tanh(c_in)?;
        let o = g.sigmoid(o)?;
        let fc = g.mul(f, state.c)?;
        let ic = g.mul(i, c_in)?;
        let c = g.add(fc, ic)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

pub fn zero_state(g: &mut Graph, batch: usize, hidden: usize) -> LstmState {
    LstmState {
        h: g.constant(Tensor::zeros(&[batch, hidden])),
        c: g.constant(Tensor::zeros(&[batch, hidden])),
    }
}

pub struct BiLstmOutput {
    /// `[batch, 2 * hidden]` per position, zero at padded positions.
    pub states: Vec<Var>,
    /// Forward state after the last real token, concatenated with the
    /// backward state after the first token.
    pub final_h: Var,
    pub final_c: Var,
}

/// Runs one LSTM left to right and another right to left over `inputs`.
/// Masked positions leave the recurrent state untouched and emit zeros.
pub fn bilstm(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    inputs: &[Var],
    masks: &[Option<StepMask>],
    hidden: usize,
) -> Result<BiLstmOutput> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::invalid("bilstm", "empty sequence"))?;
    let (batch, input_dim) = match g.value(first).shape() {
        [b, d] => (*b, *d),
        s => return Err(Error::invalid("bilstm", format!("input shape {s:?}"))),
    };
    let fwd = LstmParams::load(g, store, &format!("{prefix}.fwd"), input_dim, hidden)?;
    let bwd = LstmParams::load(g, store, &format!("{prefix}.bwd"), input_dim, hidden)?;

    let run = |g: &mut Graph, cell: &LstmParams, order: &mut dyn Iterator<Item = usize>| -> Result<(Vec<Option<Var>>, LstmState)> {
        let mut state = zero_state(g, batch, hidden);
        let mut outs = vec![None; inputs.len()];
        for t in order {
            let next = cell.step(g, inputs[t], &state)?;
            state = match &masks[t] {
                Some(m) => LstmState {
                    h: m.blend(g, next.h, state.h)?,
                    c: m.blend(g, next.c, state.c)?,
                },
                None => next,
            };
            outs[t] = Some(state.h);
        }
        Ok((outs, state))
    };
    let (f_outs, f_last) = run(g, &fwd, &mut (0..inputs.len()))?;
    let (b_outs, b_last) = run(g, &bwd, &mut (0..inputs.len()).rev())?;

    let mut states = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let cat = g.concat(&[f_outs[t].unwrap(), b_outs[t].unwrap()], 1)?;
        states.push(match &masks[t] {
            Some(m) => m.apply(g, cat)?,
            None => cat,
        });
    }
    let final_h = g.concat(&[f_last.h, b_last.h], 1)?;
    let final_c = g.concat(&[f_last.c, b_last.c], 1)?;
    Ok(BiLstmOutput {
        states,
        final_h,
        final_c,
    })
}
