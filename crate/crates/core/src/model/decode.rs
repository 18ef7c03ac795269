//! Inference-time decoding: greedy, multinomial sampling and beam search.

use rand::distributions::{Distribution, WeightedIndex};

use super::decoder::{decode_step, init_state, SourceContext};
use super::lstm::LstmState;
use super::ModelConfig;
use crate::data::{EOS, SOS};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Rng, Var};

/// Default cap on generated tokens, `</s>` included.
pub const MAX_DECODE_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Eos,
    MaxLen,
}

/// What the decoder saw at one output position.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub attention: Vec<f64>,
    pub p_gen: f64,
    pub distribution: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Extended ids, ending in `</s>` when `termination` is `Eos`.
    pub tokens: Vec<usize>,
    /// Natural log-probability of each emitted token.
    pub log_probs: Vec<f64>,
    pub steps: Vec<StepTrace>,
    pub termination: Termination,
}

impl DecodeResult {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Tokens before `</s>`.
    pub fn content(&self) -> &[usize] {
        match self.tokens.iter().position(|&t| t == EOS) {
            Some(i) => &self.tokens[..i],
            None => &self.tokens,
        }
    }
}

/// Lowest id wins ties.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// Graph-side record of one lockstep decoding step.
#[derive(Clone, Debug)]
pub struct TrackedStep {
    /// `[batch, width]` output distribution node.
    pub dist: Var,
    /// Token chosen per row (`</s>` filler for finished rows).
    pub chosen: Vec<usize>,
    /// 1 where the row was still generating.
    pub active: Vec<f64>,
}

/// Runs every row of `src` in lockstep until each has produced `</s>` or
/// `max_len` tokens. Finished rows keep being fed `</s>` but record nothing.
fn run(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    src: &SourceContext,
    max_len: usize,
    mut choose: impl FnMut(&[f64]) -> Result<usize>,
) -> Result<(Vec<DecodeResult>, Vec<TrackedStep>)> {
    let bsz = src.batch_size();
    let m = src.enc.src_len();
    let mut state = init_state(g, store, &src.enc)?;
    let mut prev = vec![SOS; bsz];
    let mut out: Vec<DecodeResult> = (0..bsz)
        .map(|_| DecodeResult {
            tokens: Vec::new(),
            log_probs: Vec::new(),
            steps: Vec::new(),
            termination: Termination::MaxLen,
        })
        .collect();
    let mut done = vec![false; bsz];
    let mut tracked = Vec::new();
    for _ in 0..max_len {
        if done.iter().all(|&d| d) {
            break;
        }
        let st = decode_step(g, store, cfg, src, &prev, &state)?;
        let dist = g.value(st.final_dist);
        let attn = g.value(st.attention);
        let p_gen = g.value(st.p_gen);
        let active: Vec<f64> = done.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect();
        for b in 0..bsz {
            if done[b] {
                prev[b] = EOS;
                continue;
            }
            let row = dist.row(b);
            let w = choose(row)?;
            let r = &mut out[b];
            r.tokens.push(w);
            r.log_probs.push(row[w].ln());
            r.steps.push(StepTrace {
                attention: attn.data()[b * m..(b + 1) * m].to_vec(),
                p_gen: p_gen.data()[b],
                distribution: row.to_vec(),
            });
            if w == EOS {
                r.termination = Termination::Eos;
                done[b] = true;
            }
            prev[b] = w;
        }
        tracked.push(TrackedStep {
            dist: st.final_dist,
            chosen: prev.clone(),
            active,
        });
        state = st.state();
    }
    Ok((out, tracked))
}

pub fn greedy(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    src: &SourceContext,
    max_len: usize,
) -> Result<Vec<DecodeResult>> {
    Ok(run(g, store, cfg, src, max_len, |d| Ok(argmax(d)))?.0)
}

/// Draws each token from the final distribution.
pub fn sample(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    src: &SourceContext,
    max_len: usize,
    rng: &mut Rng,
) -> Result<Vec<DecodeResult>> {
    Ok(sample_tracked(g, store, cfg, src, max_len, rng)?.0)
}

/// [`sample`], also returning the distribution nodes so the caller can
/// differentiate the log-probability of what was drawn.
pub fn sample_tracked(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    src: &SourceContext,
    max_len: usize,
    rng: &mut Rng,
) -> Result<(Vec<DecodeResult>, Vec<TrackedStep>)> {
    run(g, store, cfg, src, max_len, |d| {
        let w = WeightedIndex::new(d).map_err(|e| Error::NonFinite(format!("sampling distribution: {e}")))?;
        Ok(w.sample(rng))
    })
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<usize>,
    log_probs: Vec<f64>,
    steps: Vec<StepTrace>,
    score: f64,
    row: usize,
}

impl Hyp {
    fn normalized(&self) -> f64 {
        self.score / self.tokens.len().max(1) as f64
    }

    fn finish(self, termination: Termination) -> DecodeResult {
        DecodeResult {
            tokens: self.tokens,
            log_probs: self.log_probs,
            steps: self.steps,
            termination,
        }
    }
}

/// Beam search for row `example` of `src`. Hypotheses are ranked by
/// cumulative log-probability; the final pick among finished (or, at the
/// length cap, live) hypotheses uses log-probability per token.
/// A beam of one reproduces [`greedy`].
#[allow(clippy::too_many_arguments)]
pub fn beam(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    src: &SourceContext,
    example: usize,
    beam: usize,
    max_len: usize,
) -> Result<DecodeResult> {
    if beam == 0 {
        return Err(Error::invalid("beam", "beam width must be positive"));
    }
    let m = src.enc.src_len();
    let one = src.select_rows(g, &[example])?;
    let init = init_state(g, store, &one.enc)?;
    let mut state = init;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        log_probs: Vec::new(),
        steps: Vec::new(),
        score: 0.0,
        row: 0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    let mut fanned: Option<(usize, SourceContext)> = None;
    for _ in 0..max_len {
        let rows: Vec<usize> = live.iter().map(|h| h.row).collect();
        let k = rows.len();
        if fanned.as_ref().map(|(n, _)| *n) != Some(k) {
            fanned = Some((k, one.select_rows(g, &vec![0; k])?));
        }
        let ctx = &fanned.as_ref().expect("set above").1;
        let st = LstmState {
            h: g.select_rows(state.h, &rows)?,
            c: g.select_rows(state.c, &rows)?,
        };
        let prev: Vec<usize> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(SOS)).collect();
        let out = decode_step(g, store, cfg, ctx, &prev, &st)?;
        let dist = g.value(out.final_dist);
        let attn = g.value(out.attention);
        let p_gen = g.value(out.p_gen);

        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            for (w, &p) in dist.row(i).iter().enumerate() {
                if p > 0.0 {
                    cands.push((h.score + p.ln(), i, w));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut next = Vec::with_capacity(beam);
        for (score, i, w) in cands {
            if next.len() == beam {
                break;
            }
            let parent = &live[i];
            let mut h = parent.clone();
            h.tokens.push(w);
            h.log_probs.push(dist.get2(i, w).ln());
            h.steps.push(StepTrace {
                attention: attn.data()[i * m..(i + 1) * m].to_vec(),
                p_gen: p_gen.data()[i],
                distribution: dist.row(i).to_vec(),
            });
            h.score = score;
            h.row = i;
            if w == EOS {
                if finished.len() < beam {
                    finished.push(h);
                }
            } else {
                next.push(h);
            }
        }
        state = out.state();
        live = next;
        if finished.len() >= beam || live.is_empty() {
            break;
        }
    }
    let pick = |hyps: Vec<Hyp>| {
        hyps.into_iter()
            .reduce(|best, h| if h.normalized() > best.normalized() { h } else { best })
    };
    if let Some(h) = pick(finished) {
        return Ok(h.finish(Termination::Eos));
    }
    Ok(pick(live).expect("beam keeps at least one hypothesis").finish(Termination::MaxLen))
}
