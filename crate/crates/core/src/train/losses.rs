//! Cross-entropy, self-critical policy-gradient and mixed objectives.

use crate::data::{Batch, Vocab};
use crate::error::{Error, Result};
use crate::model::decoder::{init_state, masked_log_prob, teacher_forced_log_probs, SourceContext};
use crate::model::{decode, DecodeResult, Model};
use crate::tensor::{Graph, Rng, Tensor, Var};

/// Scores a generated token sequence against the gold one; expected in `[0, 1]`.
pub type RewardFn<'a> = dyn Fn(&[String], &[String]) -> f64 + 'a;

/// Mean negative log-likelihood of the gold copy-view ids over non-PAD
/// target positions, under teacher forcing.
pub fn xent_loss(g: &mut Graph, model: &Model, src: &SourceContext, batch: &Batch) -> Result<Var> {
    let init = init_state(g, &model.params, &src.enc)?;
    let steps = teacher_forced_log_probs(
        g,
        &model.params,
        &model.config,
        src,
        init,
        &batch.dec_inputs,
        &batch.tgt_copy,
        &batch.tgt_mask,
    )?;
    let all = g.concat(&steps, 1)?;
    let total = g.sum(all)?;
    let positions: usize = batch.tgt_lengths.iter().sum();
    g.scale(total, -1.0 / positions as f64)
}

/// `mean_b( -A_b * sum_t log p(w^s_bt) )` where each per-step entry of
/// `step_log_probs` is `[batch, 1]` and the advantages are constants.
pub fn surrogate(g: &mut Graph, step_log_probs: &[Var], advantages: &[f64]) -> Result<Var> {
    if step_log_probs.is_empty() {
        return Err(Error::invalid("scst", "no decoding steps"));
    }
    let n = advantages.len();
    let all = g.concat(step_log_probs, 1)?;
    let a = g.constant(Tensor::new(vec![n, 1], advantages.to_vec())?);
    let weighted = g.mul_col(all, a)?;
    let total = g.sum(weighted)?;
    g.scale(total, -1.0 / n as f64)
}

/// Surface tokens of a decoded sequence before `</s>`, copies resolved.
pub fn render(batch: &Batch, row: usize, tokens: &[usize], vocab: &Vocab) -> Vec<String> {
    tokens.iter().map(|&t| batch.render(row, t, vocab)).collect()
}

pub struct ScstOutput {
    pub loss: Var,
    pub samples: Vec<DecodeResult>,
    pub greedy: Vec<DecodeResult>,
    pub rewards: Vec<f64>,
    pub baselines: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl ScstOutput {
    pub fn mean_reward(&self) -> f64 {
        mean(&self.rewards)
    }

    pub fn mean_advantage(&self) -> f64 {
        mean(&self.advantages)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Self-critical loss: sample `w^s`, decode greedily for the baseline
/// `ŵ`, and weight the sample's log-probability (through `</s>`) by
/// `r(w^s) - r(ŵ)`, each reward computed on tokens before `</s>`.
pub fn scst_loss(
    g: &mut Graph,
    model: &Model,
    src: &SourceContext,
    batch: &Batch,
    vocab: &Vocab,
    reward: &RewardFn,
    max_len: usize,
    rng: &mut Rng,
) -> Result<ScstOutput> {
    let (samples, tracked) = decode::sample_tracked(g, &model.params, &model.config, src, max_len, rng)?;
    let greedy = decode::greedy(g, &model.params, &model.config, src, max_len)?;
    let mut rewards = Vec::with_capacity(batch.size);
    let mut baselines = Vec::with_capacity(batch.size);
    for b in 0..batch.size {
        let gold = &batch.targets[b];
        rewards.push(reward(&render(batch, b, samples[b].content(), vocab), gold));
        baselines.push(reward(&render(batch, b, greedy[b].content(), vocab), gold));
    }
    let advantages: Vec<f64> = rewards.iter().zip(&baselines).map(|(r, b)| r - b).collect();
    let steps = tracked
        .iter()
        .map(|t| masked_log_prob(g, t.dist, &t.chosen, &t.active))
        .collect::<Result<Vec<_>>>()?;
    let loss = surrogate(g, &steps, &advantages)?;
    Ok(ScstOutput {
        loss,
        samples,
        greedy,
        rewards,
        baselines,
        advantages,
    })
}

/// `min(step / ramp, alpha_max)`.
pub fn alpha_at(step: usize, ramp: usize, alpha_max: f64) -> f64 {
    (step as f64 / ramp as f64).min(alpha_max)
}

/// `(1 - alpha) * xent + alpha * rl`; the endpoints return the single
/// active term unchanged.
pub fn mixed_loss(g: &mut Graph, xent: Option<Var>, rl: Option<Var>, alpha: f64) -> Result<Var> {
    match (xent, rl) {
        (Some(x), _) if alpha == 0.0 => Ok(x),
        (_, Some(r)) if alpha == 1.0 => Ok(r),
        (Some(x), Some(r)) => {
            let x = g.scale(x, 1.0 - alpha)?;
            let r = g.scale(r, alpha)?;
            g.add(x, r)
        }
        _ => Err(Error::invalid("mixed-loss", format!("missing a loss term for alpha {alpha}"))),
    }
}
