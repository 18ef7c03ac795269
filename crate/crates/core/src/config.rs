//! Flat `key = value` run configuration with layered overrides:
//! defaults, then the config file, then `SCSTSUM_*` environment variables,
//! then command-line `--set key=value` pairs.

use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rouge::RougeMetric;
use crate::train::TrainConfig;

pub const ENV_PREFIX: &str = "SCSTSUM_";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// `None` picks the variant's default cap.
    pub alpha_max: Option<f64>,
    pub min_count: usize,
    pub train_corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Run directory to warm-start parameters and vocabularies from.
    pub init_from: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            alpha_max: None,
            min_count: 1,
            train_corpus: None,
            dev_corpus: None,
            output_dir: PathBuf::from("run"),
            init_from: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "variant",
    "word_emb_dim",
    "tag_emb_dim",
    "hidden",
    "tag_hidden",
    "vocab_size",
    "min_count",
    "batch_size",
    "lr",
    "clip",
    "alpha_max",
    "alpha_ramp_steps",
    "max_epochs",
    "max_steps",
    "patience",
    "seed",
    "reward_metric",
    "dev_metric",
    "eval_every",
    "max_decode_len",
    "train_corpus",
    "dev_corpus",
    "output_dir",
    "init_from",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "variant" => self.model.variant = v.parse()?,
            "word_emb_dim" => self.model.word_emb_dim = parse(key, v)?,
            "tag_emb_dim" => self.model.tag_emb_dim = parse(key, v)?,
            "hidden" => self.model.hidden = parse(key, v)?,
            "tag_hidden" => self.model.tag_hidden = parse(key, v)?,
            "vocab_size" => self.model.vocab_size = parse(key, v)?,
            "min_count" => self.min_count = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "clip" => self.train.clip = parse(key, v)?,
            "alpha_max" => self.alpha_max = Some(parse(key, v)?),
            "alpha_ramp_steps" => self.train.alpha_ramp_steps = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "max_steps" => self.train.max_steps = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "patience" => self.train.patience = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "reward_metric" => self.train.reward_metric = v.parse::<RougeMetric>()?,
            "dev_metric" => self.train.dev_metric = v.parse::<RougeMetric>()?,
            "eval_every" => self.train.eval_every = parse(key, v)?,
            "max_decode_len" => self.train.max_decode_len = parse(key, v)?,
            "train_corpus" => self.train_corpus = opt_path(v),
            "dev_corpus" => self.dev_corpus = opt_path(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "init_from" => self.init_from = opt_path(v),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// `key=value` override from the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Training configuration with the α cap resolved for the variant.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha_max: self
                .alpha_max
                .unwrap_or_else(|| TrainConfig::for_variant(self.model.variant).alpha_max),
            ..self.train.clone()
        }
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn render(&self) -> String {
        let t = self.train_config();
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values: Vec<String> = vec![
            self.model.variant.to_string(),
            self.model.word_emb_dim.to_string(),
            self.model.tag_emb_dim.to_string(),
            self.model.hidden.to_string(),
            self.model.tag_hidden.to_string(),
            self.model.vocab_size.to_string(),
            self.min_count.to_string(),
            t.batch_size.to_string(),
            t.lr.to_string(),
            t.clip.to_string(),
            t.alpha_max.to_string(),
            t.alpha_ramp_steps.to_string(),
            t.max_epochs.to_string(),
            t.max_steps.map(|s| s.to_string()).unwrap_or_default(),
            t.patience.to_string(),
            t.seed.to_string(),
            t.reward_metric.name().to_string(),
            t.dev_metric.name().to_string(),
            t.eval_every.to_string(),
            t.max_decode_len.to_string(),
            p(&self.train_corpus),
            p(&self.dev_corpus),
            self.output_dir.display().to_string(),
            p(&self.init_from),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        if self.train_corpus.is_none() {
            return Err(Error::Config("train_corpus is required".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn layering_order() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nhidden = 64\nseed=3\n\nvariant = postag\n").unwrap();
        c.apply_env([
            ("SCSTSUM_SEED".to_string(), "9".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ])
        .unwrap();
        c.apply_override("hidden=16").unwrap();
        assert_eq!(c.model.hidden, 16);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.model.variant, Variant::Postag);
        assert_eq!(c.train_config().alpha_max, 0.4);
        c.apply_override("alpha_max=0").unwrap();
        assert_eq!(c.train_config().alpha_max, 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("hiden = 3").is_err());
        assert!(c.apply_env([("SCSTSUM_BOGUS".to_string(), "1".to_string())]).is_err());
        assert!(c.apply_override("lr").is_err());
        assert!(c.set("lr", "fast").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("variant = pos-deptag\nmax_steps = 12\ntrain_corpus = a.jsonl\nreward_metric = rouge-2").unwrap();
        let text = c.render();
        assert_eq!(text.lines().count(), KEYS.len());
        let mut d = RunConfig::default();
        d.apply_text(&text).unwrap();
        assert_eq!(d.render(), text);
        assert_eq!(d.train_config(), c.train_config());
    }
}
