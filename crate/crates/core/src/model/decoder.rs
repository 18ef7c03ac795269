//! Attention decoder with a pointer-generator output layer.
//!
//! One step, given the previous state `s` and previous word `y`:
//!
//! ```text
//! e_j   = v . tanh(W_enc h_j + W_dec s + b)      a = masked_softmax(e)
//! c     = sum_j a_j h_j
//! s'    = LSTM([emb(y); c], s)
//! P_gen = softmax(W_proj tanh(W_out [s'; c; emb(y)] + b_out) + b_proj)
//! p_gen = sigmoid(w_p . [c; s'; emb(y)] + b_p)
//! P     = p_gen * P_gen (zero on extended ids) + (1 - p_gen) * scatter(a)
//! ```

use super::encoder::EncoderOutput;
use super::lstm::{LstmParams, LstmState};
use super::ModelConfig;
use crate::data::{Batch, UNK};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Everything the decoder reads from the source side.
#[derive(Clone, Debug)]
pub struct SourceContext {
    pub enc: EncoderOutput,
    /// `W_enc h_j`, precomputed once per source.
    pub enc_proj: Vec<Var>,
    /// Extended id of every source position, row-major `[batch, src_len]`.
    pub ext_ids: Vec<usize>,
    /// Width of the extended output distribution.
    pub width: usize,
    pub vocab_size: usize,
}

impl SourceContext {
    pub fn new(g: &mut Graph, store: &ParamStore, enc: EncoderOutput, batch: &Batch) -> Result<Self> {
        let w_enc = g.param(store, "attn.w_enc")?;
        let enc_proj = enc
            .states
            .iter()
            .map(|&h| g.matmul(h, w_enc))
            .collect::<Result<Vec<_>>>()?;
        Ok(SourceContext {
            enc,
            enc_proj,
            ext_ids: batch.src_ext_ids.clone(),
            width: batch.ext_width(),
            vocab_size: batch.vocab_size,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.enc.batch_size()
    }

    /// Row-selected copy, e.g. one example repeated over a beam.
    pub fn select_rows(&self, g: &mut Graph, rows: &[usize]) -> Result<Self> {
        let m = self.enc.src_len();
        let mut ext_ids = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            ext_ids.extend_from_slice(&self.ext_ids[r * m..(r + 1) * m]);
        }
        Ok(SourceContext {
            enc: self.enc.select_rows(g, rows)?,
            enc_proj: self
                .enc_proj
                .iter()
                .map(|&p| g.select_rows(p, rows))
                .collect::<Result<Vec<_>>>()?,
            ext_ids,
            width: self.width,
            vocab_size: self.vocab_size,
        })
    }
}

/// Node handles produced by one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct DecoderStep {
    pub h: Var,
    pub c: Var,
    pub context: Var,
    /// `[batch, src_len]`
    pub attention: Var,
    /// `[batch, 1]`
    pub p_gen: Var,
    /// `[batch, vocab]`
    pub gen_dist: Var,
    /// `[batch, width]`
    pub final_dist: Var,
}

impl DecoderStep {
    pub fn state(&self) -> LstmState {
        LstmState { h: self.h, c: self.c }
    }
}

/// Affine maps of the encoder's final states to the decoder's initial `(h, c)`.
pub fn init_state(g: &mut Graph, store: &ParamStore, enc: &EncoderOutput) -> Result<LstmState> {
    let affine = |g: &mut Graph, x: Var, name: &str| -> Result<Var> {
        let w = g.param(store, &format!("{name}.w"))?;
        let b = g.param(store, &format!("{name}.b"))?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    };
    Ok(LstmState {
        h: affine(g, enc.final_h, "dec.init_h")?,
        c: affine(g, enc.final_c, "dec.init_c")?,
    })
}

/// Additive attention of decoder state `s_prev` over the source.
/// Returns `(context [batch, 2H], weights [batch, src_len])`.
pub fn attention(g: &mut Graph, store: &ParamStore, src: &SourceContext, s_prev: Var) -> Result<(Var, Var)> {
    let w_dec = g.param(store, "attn.w_dec")?;
    let b = g.param(store, "attn.b")?;
    let v = g.param(store, "attn.v")?;
    let dec = g.matmul(s_prev, w_dec)?;
    let dec = g.add_row(dec, b)?;
    let mut scores = Vec::with_capacity(src.enc_proj.len());
    for &p in &src.enc_proj {
        let z = g.add(p, dec)?;
        let z = g.tanh(z)?;
        scores.push(g.matmul(z, v)?);
    }
    let scores = g.concat(&scores, 1)?;
    let weights = g.softmax_masked(scores, Some(&src.enc.mask))?;
    let mut context = None;
    for (j, &h) in src.enc.states.iter().enumerate() {
        let a = g.slice(weights, 1, j, 1)?;
        let term = g.mul_col(h, a)?;
        context = Some(match context {
            Some(c) => g.add(c, term)?,
            None => term,
        });
    }
    Ok((context.expect("non-empty source"), weights))
}

/// Feeds previous tokens back through the embedding; extended (copied)
/// ids have no embedding and enter as UNK.
pub fn embed_prev(g: &mut Graph, store: &ParamStore, prev_ids: &[usize], vocab_size: usize) -> Result<Var> {
    let table = g.param(store, "embed.word")?;
    let ids: Vec<usize> = prev_ids
        .iter()
        .map(|&i| if i >= vocab_size { UNK } else { i })
        .collect();
    g.embedding(table, &ids)
}

/// State update and output distributions given the step's context.
#[allow(clippy::too_many_arguments)]
pub fn step(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    src: &SourceContext,
    prev_emb: Var,
    state: &LstmState,
    context: Var,
    attention: Var,
) -> Result<DecoderStep> {
    let x = g.concat(&[prev_emb, context], 1)?;
    let input_dim = cfg.word_emb_dim + cfg.encoder_state_dim();
    let got = g.value(x).shape()[1];
    if got != input_dim {
        return Err(Error::Dimension {
            layer: "dec.lstm input".into(),
            expected: input_dim,
            got,
        });
    }
    let cell = LstmParams::load(g, store, "dec.lstm", input_dim, cfg.hidden)?;
    let next = cell.step(g, x, state)?;

    let feat = g.concat(&[next.h, context, prev_emb], 1)?;
    let w_out = g.param(store, "out.hidden.w")?;
    let b_out = g.param(store, "out.hidden.b")?;
    let hid = g.matmul(feat, w_out)?;
    let hid = g.add_row(hid, b_out)?;
    let hid = g.tanh(hid)?;
    let w_proj = g.param(store, "out.proj.w")?;
    let b_proj = g.param(store, "out.proj.b")?;
    let logits = g.matmul(hid, w_proj)?;
    let logits = g.add_row(logits, b_proj)?;
    let gen_dist = g.softmax(logits)?;

    let switch_in = g.concat(&[context, next.h, prev_emb], 1)?;
    let w_p = g.param(store, "pgen.w")?;
    let b_p = g.param(store, "pgen.b")?;
    let p = g.matmul(switch_in, w_p)?;
    let p = g.add_row(p, b_p)?;
    let p_gen = g.sigmoid(p)?;

    let final_dist = mix_copy(g, gen_dist, attention, p_gen, &src.ext_ids, src.width)?;
    Ok(DecoderStep {
        h: next.h,
        c: next.c,
        context,
        attention,
        p_gen,
        gen_dist,
        final_dist,
    })
}

/// `p_gen * pad(gen) + (1 - p_gen) * scatter_add(attention -> ext ids)`.
pub fn mix_copy(
    g: &mut Graph,
    gen_dist: Var,
    attention: Var,
    p_gen: Var,
    ext_ids: &[usize],
    width: usize,
) -> Result<Var> {
    let gen = g.pad_cols(gen_dist, width)?;
    let gen = g.mul_col(gen, p_gen)?;
    let copy = g.scatter_add_cols(attention, ext_ids, width)?;
    let p_copy = g.affine(p_gen, -1.0, 1.0)?;
    let copy = g.mul_col(copy, p_copy)?;
    g.add(gen, copy)
}

/// `log dist[b, ids[b]]` as `[batch, 1]`, exactly zero (with zero
/// gradient) on rows where `mask` is zero.
pub fn masked_log_prob(g: &mut Graph, dist: Var, ids: &[usize], mask: &[f64]) -> Result<Var> {
    let p = g.gather_cols(dist, ids)?;
    if mask.iter().all(|&v| v == 1.0) {
        return g.log(p);
    }
    let n = mask.len();
    let keep = g.constant(Tensor::new(vec![n, 1], mask.to_vec())?);
    let fill = g.constant(Tensor::new(vec![n, 1], mask.iter().map(|v| 1.0 - v).collect())?);
    let p = g.mul_col(p, keep)?;
    let p = g.add(p, fill)?;
    g.log(p)
}

/// Embedding, attention and [`step`] in one call.
pub fn decode_step(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    src: &SourceContext,
    prev_ids: &[usize],
    state: &LstmState,
) -> Result<DecoderStep> {
    let emb = embed_prev(g, store, prev_ids, src.vocab_size)?;
    let (context, weights) = attention(g, store, src, state.h)?;
    step(g, store, cfg, src, emb, state, context, weights)
}

/// Teacher-forced pass. `inputs` and `targets` are row-major
/// `[batch, steps]`; returns `log P(target)` per step as `[batch, 1]`,
/// exactly zero where `mask` is zero.
#[allow(clippy::too_many_arguments)]
pub fn teacher_forced_log_probs(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    src: &SourceContext,
    init: LstmState,
    inputs: &[usize],
    targets: &[usize],
    mask: &Tensor,
) -> Result<Vec<Var>> {
    let bsz = src.batch_size();
    let steps = mask.shape()[1];
    if inputs.len() != bsz * steps || targets.len() != bsz * steps {
        return Err(Error::LengthMismatch {
            what: "teacher-forced ids vs mask",
            left: inputs.len(),
            right: bsz * steps,
        });
    }
    let mut state = init;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let prev: Vec<usize> = (0..bsz).map(|b| inputs[b * steps + t]).collect();
        let gold: Vec<usize> = (0..bsz).map(|b| targets[b * steps + t]).collect();
        let st = decode_step(g, store, cfg, src, &prev, &state)?;
        let m: Vec<f64> = (0..bsz).map(|b| mask.get2(b, t)).collect();
        out.push(masked_log_prob(g, st.final_dist, &gold, &m)?);
        state = st.state();
    }
    Ok(out)
}
