//! Hierarchical syntax-aware encoder and pointer-generator decoder.

mod config;
pub mod decode;
pub mod decoder;
pub mod encoder;
pub mod lstm;

pub use config::{ModelConfig, Variant};
pub use decode::{DecodeResult, StepTrace, Termination};

use crate::data::Batch;
use crate::error::Result;
use crate::tensor::{Graph, ParamStore, Rng, Tensor};
use decoder::SourceContext;
use lstm::{FORGET_BIAS, GATES};

/// Half-width of the uniform initialiser for weight matrices and embeddings.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn lstm_shapes(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, input: usize, hidden: usize) {
    out.push((format!("{prefix}.w"), vec![input + hidden, GATES * hidden]));
    out.push((format!("{prefix}.b"), vec![GATES * hidden]));
}

/// Name and shape of every parameter, in a fixed order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (e, h, v) = (cfg.word_emb_dim, cfg.hidden, cfg.vocab_size);
    let enc = cfg.encoder_state_dim();
    let mut out = vec![("embed.word".to_string(), vec![v, e])];
    let channels = [
        (cfg.variant.uses_pos(), "pos", cfg.pos_vocab_size),
        (cfg.variant.uses_dep(), "dep", cfg.dep_vocab_size),
    ];
    for (on, name, size) in channels {
        if on {
            out.push((format!("embed.{name}"), vec![size, cfg.tag_emb_dim]));
            for dir in ["fwd", "bwd"] {
                lstm_shapes(&mut out, &format!("enc.{name}.{dir}"), cfg.tag_emb_dim, cfg.tag_hidden);
            }
        }
    }
    for dir in ["fwd", "bwd"] {
        lstm_shapes(&mut out, &format!("enc.word.{dir}"), cfg.word_rnn_input_dim(), h);
    }
    for name in ["dec.init_h", "dec.init_c"] {
        out.push((format!("{name}.w"), vec![enc, h]));
        out.push((format!("{name}.b"), vec![h]));
    }
    out.push(("attn.w_enc".into(), vec![enc, h]));
    out.push(("attn.w_dec".into(), vec![h, h]));
    out.push(("attn.b".into(), vec![h]));
    out.push(("attn.v".into(), vec![h, 1]));
    lstm_shapes(&mut out, "dec.lstm", e + enc, h);
    out.push(("out.hidden.w".into(), vec![h + enc + e, h]));
    out.push(("out.hidden.b".into(), vec![h]));
    out.push(("out.proj.w".into(), vec![h, v]));
    out.push(("out.proj.b".into(), vec![v]));
    out.push(("pgen.w".into(), vec![enc + h + e, 1]));
    out.push(("pgen.b".into(), vec![1]));
    out
}

/// Closed-form parameter count.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let (e, h, v) = (cfg.word_emb_dim, cfg.hidden, cfg.vocab_size);
    let (te, th) = (cfg.tag_emb_dim, cfg.tag_hidden);
    let lstm = |input: usize, hidden: usize| (input + hidden) * 4 * hidden + 4 * hidden;
    let mut n = v * e;
    if cfg.variant.uses_pos() {
        n += cfg.pos_vocab_size * te + 2 * lstm(te, th);
    }
    if cfg.variant.uses_dep() {
        n += cfg.dep_vocab_size * te + 2 * lstm(te, th);
    }
    n += 2 * lstm(cfg.word_rnn_input_dim(), h);
    n += 2 * (2 * h * h + h);
    n += 2 * h * h + h * h + h + h;
    n += lstm(e + 2 * h, h);
    n += (h + 2 * h + e) * h + h;
    n += h * v + v;
    n += 2 * h + h + e + 1;
    n
}

fn is_lstm_bias(name: &str) -> bool {
    name.ends_with(".b") && (name.starts_with("enc.") || name.starts_with("dec.lstm"))
}

impl Model {
    /// Uniform weights and embeddings, zero biases, forget-gate biases at one.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in param_shapes(&config) {
            let t = if shape.len() == 1 {
                let mut b = Tensor::zeros(&shape);
                if is_lstm_bias(&name) {
                    let h = shape[0] / GATES;
                    b.data_mut()[h..2 * h].fill(FORGET_BIAS);
                }
                b
            } else {
                Tensor::uniform(&shape, -INIT_SCALE, INIT_SCALE, rng)
            };
            params.insert(name, t);
        }
        Ok(Model { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Encodes `batch` and prepares the decoder's view of the source.
    pub fn source(&self, g: &mut Graph, batch: &Batch) -> Result<SourceContext> {
        let enc = encoder::encode(g, &self.params, &self.config, batch)?;
        SourceContext::new(g, &self.params, enc, batch)
    }

    pub fn greedy(&self, batch: &Batch, max_len: usize) -> Result<Vec<DecodeResult>> {
        let mut g = Graph::new();
        let src = self.source(&mut g, batch)?;
        decode::greedy(&mut g, &self.params, &self.config, &src, max_len)
    }

    pub fn beam(&self, batch: &Batch, beam: usize, max_len: usize) -> Result<Vec<DecodeResult>> {
        let mut g = Graph::new();
        let src = self.source(&mut g, batch)?;
        (0..batch.size)
            .map(|b| decode::beam(&mut g, &self.params, &self.config, &src, b, beam, max_len))
            .collect()
    }
}
