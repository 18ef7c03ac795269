use super::lstm::{bilstm, StepMask};
use super::ModelConfig;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagChannel {
    Pos,
    Dep,
}

impl TagChannel {
    pub fn name(self) -> &'static str {
        match self {
            TagChannel::Pos => "pos",
            TagChannel::Dep => "dep",
        }
    }
}

/// Per-position encoder states `h_j = [fwd_j; bwd_j]` plus the final
/// states used to initialise the decoder.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub states: Vec<Var>,
    pub final_h: Var,
    pub final_c: Var,
    /// `[batch, src_len]`, zero at padding.
    pub mask: Tensor,
}

impl EncoderOutput {
    pub fn batch_size(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn src_len(&self) -> usize {
        self.states.len()
    }

    /// Rows `rows` of every tensor (used to fan an example out over a beam).
    pub fn select_rows(&self, g: &mut Graph, rows: &[usize]) -> Result<EncoderOutput> {
        let states = self
            .states
            .iter()
            .map(|&s| g.select_rows(s, rows))
            .collect::<Result<Vec<_>>>()?;
        let m = self.src_len();
        let mut mask = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            mask.extend_from_slice(self.mask.row(r));
        }
        Ok(EncoderOutput {
            states,
            final_h: g.select_rows(self.final_h, rows)?,
            final_c: g.select_rows(self.final_c, rows)?,
            mask: Tensor::new(vec![rows.len(), m], mask)?,
        })
    }
}

pub fn source_masks(g: &mut Graph, batch: &Batch) -> Vec<Option<StepMask>> {
    (0..batch.src_len)
        .map(|t| StepMask::new(g, &batch.src_mask_col(t)))
        .collect()
}

/// Bidirectional tag encoder: embeds tag ids (zeroed at padding) and runs
/// the channel's bi-LSTM. Returns `[batch, 2 * tag_hidden]` per position.
pub fn encode_tags(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    channel: TagChannel,
    batch: &Batch,
    masks: &[Option<StepMask>],
) -> Result<Vec<Var>> {
    let ids = match channel {
        TagChannel::Pos => batch.pos_ids.as_ref(),
        TagChannel::Dep => batch.dep_ids.as_ref(),
    }
    .ok_or(Error::MissingTagChannel {
        variant: cfg.variant.name(),
        channel: channel.name(),
    })?;
    let table = g.param(store, &format!("embed.{}", channel.name()))?;
    let mut embs = Vec::with_capacity(batch.src_len);
    for (t, mask) in masks.iter().enumerate() {
        let col = Batch::src_column(ids, batch.size, batch.src_len, t);
        let e = g.embedding(table, &col)?;
        embs.push(match mask {
            Some(m) => m.apply(g, e)?,
            None => e,
        });
    }
    let out = bilstm(g, store, &format!("enc.{}", channel.name()), &embs, masks, cfg.tag_hidden)?;
    Ok(out.states)
}

/// Position-wise concatenation of word embeddings with any tag states.
pub fn compose_hierarchical(g: &mut Graph, word_embs: &[Var], tag_states: &[&[Var]]) -> Result<Vec<Var>> {
    for tags in tag_states {
        if tags.len() != word_embs.len() {
            return Err(Error::LengthMismatch {
                what: "tag states vs word embeddings",
                left: tags.len(),
                right: word_embs.len(),
            });
        }
    }
    (0..word_embs.len())
        .map(|t| {
            if tag_states.is_empty() {
                return Ok(word_embs[t]);
            }
            let mut parts = vec![word_embs[t]];
            parts.extend(tag_states.iter().map(|s| s[t]));
            g.concat(&parts, 1)
        })
        .collect()
}

pub fn embed_words(g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<Vec<Var>> {
    let table = g.param(store, "embed.word")?;
    (0..batch.src_len)
        .map(|t| {
            let col = Batch::src_column(&batch.src_ids, batch.size, batch.src_len, t);
            g.embedding(table, &col)
        })
        .collect()
}

/// Word-level bi-LSTM over already composed inputs.
pub fn encode_words(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    inputs: &[Var],
    masks: &[Option<StepMask>],
    mask: Tensor,
) -> Result<EncoderOutput> {
    if let Some(&x) = inputs.first() {
        let got = g.value(x).shape()[1];
        if got != cfg.word_rnn_input_dim() {
            return Err(Error::Dimension {
                layer: "enc.word input".into(),
                expected: cfg.word_rnn_input_dim(),
                got,
            });
        }
    }
    let out = bilstm(g, store, "enc.word", inputs, masks, cfg.hidden)?;
    Ok(EncoderOutput {
        states: out.states,
        final_h: out.final_h,
        final_c: out.final_c,
        mask,
    })
}

/// Full encoder for the configured variant.
pub fn encode(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, batch: &Batch) -> Result<EncoderOutput> {
    let masks = source_masks(g, batch);
    let words = embed_words(g, store, batch)?;
    let pos = if cfg.variant.uses_pos() {
        Some(encode_tags(g, store, cfg, TagChannel::Pos, batch, &masks)?)
    } else {
        None
    };
    let dep = if cfg.variant.uses_dep() {
        Some(encode_tags(g, store, cfg, TagChannel::Dep, batch, &masks)?)
    } else {
        None
    };
    let tags: Vec<&[Var]> = pos.as_deref().into_iter().chain(dep.as_deref()).collect();
    let inputs = compose_hierarchical(g, &words, &tags)?;
    encode_words(g, store, cfg, &inputs, &masks, batch.src_mask.clone())
}
