//! Training loop: mixed cross-entropy / self-critical objective with a
//! linear α ramp, Adam with global-norm clipping, dev-set early stopping.

mod artifacts;
mod losses;

pub use artifacts::{load_run, save_run, RunMeta, CHECKPOINT_FILE, META_FILE};
pub use losses::{alpha_at, mixed_loss, render, scst_loss, surrogate, xent_loss, RewardFn, ScstOutput};

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Vocabs};
use crate::error::{Error, Result};
use crate::model::{Model, Variant};
use crate::rouge::{corpus_rouge, CorpusRouge, RougeMetric};
use crate::tensor::{clip_global_norm, AdamConfig, AdamState, Graph, Rng};

pub const ALPHA_MAX_PLAIN: f64 = 0.82;
pub const ALPHA_MAX_SYNTAX: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    pub alpha_max: f64,
    pub alpha_ramp_steps: usize,
    pub max_epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub reward_metric: RougeMetric,
    pub dev_metric: RougeMetric,
    pub eval_every: usize,
    pub max_decode_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-3,
            clip: 2.0,
            alpha_max: ALPHA_MAX_PLAIN,
            alpha_ramp_steps: 100_000,
            max_epochs: 30,
            max_steps: None,
            patience: 5,
            seed: 1,
            reward_metric: RougeMetric::RougeL,
            dev_metric: RougeMetric::Rouge2,
            eval_every: 500,
            max_decode_len: crate::model::decode::MAX_DECODE_LEN,
        }
    }
}

impl TrainConfig {
    /// Defaults with the α cap the paper uses for `variant`.
    pub fn for_variant(variant: Variant) -> Self {
        let alpha_max = if variant == Variant::Baseline {
            ALPHA_MAX_PLAIN
        } else {
            ALPHA_MAX_SYNTAX
        };
        TrainConfig {
            alpha_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_max) {
            return Err(Error::Config(format!("alpha_max {} outside [0, 1]", self.alpha_max)));
        }
        let positive = [
            ("alpha_ramp_steps", self.alpha_ramp_steps),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            return Err(Error::Config("lr and clip must be positive".into()));
        }
        Ok(())
    }

    pub fn alpha(&self, step: usize) -> f64 {
        alpha_at(step, self.alpha_ramp_steps, self.alpha_max)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub alpha: f64,
    pub xent: Option<f64>,
    pub rl: Option<f64>,
    pub mixed: f64,
    pub dev: Option<CorpusRouge>,
    pub mean_reward: Option<f64>,
    pub mean_advantage: Option<f64>,
}

pub const LOG_HEADER: &str = "step,alpha,xent,rl,mixed,dev_r1,dev_r2,dev_rl,mean_reward,mean_advantage";

impl LogRow {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{:.6},{},{},{},{},{}",
            self.step,
            self.alpha,
            f(self.xent),
            f(self.rl),
            self.mixed,
            f(self.dev.map(|d| d.r1.f1)),
            f(self.dev.map(|d| d.r2.f1)),
            f(self.dev.map(|d| d.rl.f1)),
            f(self.mean_reward),
            f(self.mean_advantage),
        )
    }
}

pub struct TrainState {
    pub step: usize,
    pub alpha: f64,
    pub best_dev: Option<f64>,
    pub best_step: Option<usize>,
    pub evals_without_improvement: usize,
    pub rng: Rng,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub best_dev: Option<f64>,
    pub best_step: Option<usize>,
    pub stopped_early: bool,
}

fn score(metric: RougeMetric, r: &CorpusRouge) -> f64 {
    match metric {
        RougeMetric::Rouge1 => r.r1.f1,
        RougeMetric::Rouge2 => r.r2.f1,
        RougeMetric::RougeL => r.rl.f1,
    }
}

pub struct Trainer {
    pub model: Model,
    pub vocabs: Vocabs,
    pub config: TrainConfig,
    pub state: TrainState,
    adam: AdamState,
}

impl Trainer {
    pub fn new(model: Model, vocabs: Vocabs, config: TrainConfig, rng: Rng) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        Ok(Trainer {
            model,
            vocabs,
            state: TrainState {
                step: 0,
                alpha: config.alpha(0),
                best_dev: None,
                best_step: None,
                evals_without_improvement: 0,
                rng,
            },
            config,
            adam,
        })
    }

    /// One optimizer update on `examples`.
    pub fn train_step(&mut self, examples: &[Example], batch_index: usize) -> Result<LogRow> {
        let step = self.state.step;
        let alpha = self.config.alpha(step);
        self.state.alpha = alpha;
        let batch = self.vocabs.batch(examples);
        let mut g = Graph::new();
        let src = self.model.source(&mut g, &batch)?;
        let xent = if alpha < 1.0 {
            Some(xent_loss(&mut g, &self.model, &src, &batch)?)
        } else {
            None
        };
        let metric = self.config.reward_metric;
        let reward = move |c: &[String], r: &[String]| metric.score(c, r).f1;
        let rl = if alpha > 0.0 {
            Some(scst_loss(
                &mut g,
                &self.model,
                &src,
                &batch,
                &self.vocabs.words,
                &reward,
                self.config.max_decode_len,
                &mut self.state.rng,
            )?)
        } else {
            None
        };
        let loss = mixed_loss(&mut g, xent, rl.as_ref().map(|o| o.loss), alpha)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            log::error!(
                "non-finite loss at step {step}, batch {batch_index}: sources {:?}",
                batch.sources
            );
            return Err(Error::NanLoss {
                step,
                batch_index,
                seed: self.config.seed,
            });
        }
        let row = LogRow {
            step,
            alpha,
            xent: xent.map(|v| g.value(v).item()),
            rl: rl.as_ref().map(|o| g.value(o.loss).item()),
            mixed: value,
            dev: None,
            mean_reward: rl.as_ref().map(ScstOutput::mean_reward),
            mean_advantage: rl.as_ref().map(ScstOutput::mean_advantage),
        };
        let mut grads = g.backward(loss)?.into_params();
        clip_global_norm(&mut grads, self.config.clip);
        self.adam.step(&mut self.model.params, &grads)?;
        self.state.step += 1;
        Ok(row)
    }

    /// Greedy summaries, as surface tokens, for `examples`.
    pub fn summarize(&self, examples: &[Example]) -> Result<Vec<Vec<String>>> {
        summarize(&self.model, &self.vocabs, examples, self.config.batch_size, self.config.max_decode_len)
    }

    pub fn evaluate(&self, examples: &[Example]) -> Result<CorpusRouge> {
        let out = self.summarize(examples)?;
        let gold: Vec<Vec<String>> = examples.iter().map(|e| e.target.clone()).collect();
        corpus_rouge(&out, &gold)
    }

    /// Trains until `max_epochs`, `max_steps` or early stopping, writing
    /// one CSV row per step to `log`. Ends with the best dev parameters.
    pub fn fit(&mut self, train: &[Example], dev: &[Example], log: &mut impl Write) -> Result<TrainSummary> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus("training set".into()));
        }
        let io = |e| Error::io("training log", e);
        writeln!(log, "{LOG_HEADER}").map_err(io)?;
        let mut best_params = None;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut epochs = 0;
        let mut stopped_early = false;
        'outer: for _ in 0..self.config.max_epochs {
            order.shuffle(&mut self.state.rng);
            epochs += 1;
            for (bi, chunk) in order.chunks(self.config.batch_size).enumerate() {
                if self.config.max_steps.is_some_and(|m| self.state.step >= m) {
                    break 'outer;
                }
                let examples: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
                let mut row = self.train_step(&examples, bi)?;
                if !dev.is_empty() && self.state.step % self.config.eval_every == 0 {
                    let scores = self.evaluate(dev)?;
                    row.dev = Some(scores);
                    if self.record_dev(score(self.config.dev_metric, &scores)) {
                        best_params = Some(self.model.params.clone());
                    } else if self.state.evals_without_improvement >= self.config.patience {
                        writeln!(log, "{}", row.to_csv()).map_err(io)?;
                        stopped_early = true;
                        break 'outer;
                    }
                }
                writeln!(log, "{}", row.to_csv()).map_err(io)?;
            }
        }
        if !dev.is_empty() && self.state.step % self.config.eval_every != 0 {
            let s = score(self.config.dev_metric, &self.evaluate(dev)?);
            if self.record_dev(s) {
                best_params = None;
            }
        }
        if let Some(p) = best_params {
            self.model.params = p;
        }
        Ok(TrainSummary {
            steps: self.state.step,
            epochs,
            best_dev: self.state.best_dev,
            best_step: self.state.best_step,
            stopped_early,
        })
    }

    /// Returns true when `value` beats the best dev score so far.
    fn record_dev(&mut self, value: f64) -> bool {
        if self.state.best_dev.map_or(true, |b| value > b) {
            self.state.best_dev = Some(value);
            self.state.best_step = Some(self.state.step);
            self.state.evals_without_improvement = 0;
            true
        } else {
            self.state.evals_without_improvement += 1;
            false
        }
    }
}

/// Greedy or beam summaries for `examples`, in order.
pub fn summarize(
    model: &Model,
    vocabs: &Vocabs,
    examples: &[Example],
    batch_size: usize,
    max_len: usize,
) -> Result<Vec<Vec<String>>> {
    summarize_with(model, vocabs, examples, batch_size, max_len, 1)
}

pub fn summarize_with(
    model: &Model,
    vocabs: &Vocabs,
    examples: &[Example],
    batch_size: usize,
    max_len: usize,
    beam: usize,
) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = vocabs.batch(chunk);
        let decoded = if beam == 1 {
            model.greedy(&batch, max_len)?
        } else {
            model.beam(&batch, beam, max_len)?
        };
        for (b, d) in decoded.iter().enumerate() {
            out.push(render(&batch, b, d.content(), &vocabs.words));
        }
    }
    Ok(out)
}

/// Dimensions of the finite-difference check of the whole model.
pub fn gradcheck_config(variant: Variant) -> crate::model::ModelConfig {
    crate::model::ModelConfig {
        variant,
        word_emb_dim: 5,
        tag_emb_dim: 3,
        hidden: 7,
        tag_hidden: 3,
        vocab_size: 12,
        pos_vocab_size: 7,
        dep_vocab_size: 7,
    }
}

fn gradcheck_fixture() -> (Vec<Example>, Vocabs) {
    let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let ex = |src: &str, tgt: &str, pos: &str, dep: &str| Example {
        source: split(src),
        target: split(tgt),
        pos: Some(split(pos)),
        dep: Some(split(dep)),
    };
    // source length 4, one padded row, one copy-only target word
    let data = vec![
        ex("a b zed c", "b zed", "DT NN NN VB", "det nsubj nsubj root"),
        ex("d e f", "e f", "DT NN VB", "det nsubj root"),
    ];
    let words = split("a b c d e f g h");
    let pos = split("NN VB DT");
    let dep = split("nsubj root det");
    let vocabs = Vocabs {
        words: crate::data::Vocab::build(words.iter(), 12, 1),
        pos: crate::data::Vocab::build(pos.iter(), 7, 1),
        dep: crate::data::Vocab::build(dep.iter(), 7, 1),
    };
    (data, vocabs)
}

/// Max relative error between backprop and central differences of the
/// cross-entropy loss with respect to every parameter of a tiny model.
pub fn model_gradcheck(variant: Variant, seed: u64, h: f64) -> Result<f64> {
    let (data, vocabs) = gradcheck_fixture();
    let model = Model::init(gradcheck_config(variant), &mut crate::tensor::seeded_rng(seed))?;
    let batch = vocabs.batch(&data);
    let cfg = model.config.clone();
    crate::tensor::finite_diff_check_params(
        |g, store| {
            let m = Model {
                config: cfg.clone(),
                params: store.clone(),
            };
            let src = m.source(g, &batch)?;
            xent_loss(g, &m, &src, &batch)
        },
        &model.params,
        h,
    )
}
