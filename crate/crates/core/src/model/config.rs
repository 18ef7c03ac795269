use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which syntactic channels feed the word encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    Postag,
    Deptag,
    PosDeptag,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Postag, Variant::Deptag, Variant::PosDeptag];

    pub fn uses_pos(self) -> bool {
        matches!(self, Variant::Postag | Variant::PosDeptag)
    }

    pub fn uses_dep(self) -> bool {
        matches!(self, Variant::Deptag | Variant::PosDeptag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Postag => "postag",
            Variant::Deptag => "deptag",
            Variant::PosDeptag => "pos-deptag",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (baseline, postag, deptag, pos-deptag)")))
    }
}

/// Encoder and decoder sizes. The decoder state and attention width equal
/// `hidden`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub word_emb_dim: usize,
    pub tag_emb_dim: usize,
    /// Hidden units per direction of the word encoder; also the decoder size.
    pub hidden: usize,
    /// Hidden units per direction of each tag encoder.
    pub tag_hidden: usize,
    pub vocab_size: usize,
    pub pos_vocab_size: usize,
    pub dep_vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Baseline,
            word_emb_dim: 128,
            tag_emb_dim: 30,
            hidden: 256,
            tag_hidden: 30,
            vocab_size: 30_000,
            pos_vocab_size: 40,
            dep_vocab_size: 244,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_emb_dim", self.word_emb_dim),
            ("tag_emb_dim", self.tag_emb_dim),
            ("hidden", self.hidden),
            ("tag_hidden", self.tag_hidden),
            ("vocab_size", self.vocab_size),
            ("pos_vocab_size", self.pos_vocab_size),
            ("dep_vocab_size", self.dep_vocab_size),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= crate::data::EOS {
            return Err(Error::Config("vocab_size must exceed the reserved ids".into()));
        }
        Ok(())
    }

    /// Width of one position of the word encoder input:
    /// `[ew]`, `[ew; hp]`, `[ew; hd]` or `[ew; hp; hd]`.
    pub fn word_rnn_input_dim(&self) -> usize {
        let channels = self.variant.uses_pos() as usize + self.variant.uses_dep() as usize;
        self.word_emb_dim + channels * 2 * self.tag_hidden
    }

    /// Copy with vocabulary sizes taken from built vocabularies.
    pub fn sized_for(&self, vocabs: &crate::data::Vocabs) -> Self {
        ModelConfig {
            vocab_size: vocabs.words.len(),
            pos_vocab_size: vocabs.pos.len(),
            dep_vocab_size: vocabs.dep.len(),
            ..self.clone()
        }
    }

    pub fn encoder_state_dim(&self) -> usize {
        2 * self.hidden
    }
}
