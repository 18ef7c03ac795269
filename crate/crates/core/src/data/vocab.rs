use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;

pub const WORD_VOCAB_MAX: usize = 30_000;
pub const POS_VOCAB_MAX: usize = 40;
pub const DEP_VOCAB_MAX: usize = 244;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token/id bijection with the four reserved ids at the front.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Ranks tokens by descending frequency with lexicographic tie-break and
    /// keeps at most `max_size` entries including the reserved ones.
    pub fn build<'a, I>(tokens: I, max_size: usize, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !SPECIALS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let room = max_size.saturating_sub(SPECIALS.len());
        let mut vocab = Self::specials_only();
        for (t, _) in ranked.into_iter().take(room) {
            vocab.push(t);
        }
        vocab
    }

    fn specials_only() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for s in SPECIALS {
            v.push(s);
        }
        v
    }

    fn push(&mut self, t: &str) {
        self.ids.insert(t.to_string(), self.tokens.len());
        self.tokens.push(t.to_string());
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One `token<TAB>id` line per entry, in id order.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{t}\t{i}");
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut v = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Config(format!("vocab line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Config(format!("vocab line {}: bad id `{id}`", n + 1)))?;
            if id != n || v.ids.contains_key(tok) {
                return Err(Error::Config(format!("vocab line {}: ids must be dense and unique", n + 1)));
            }
            v.push(tok);
        }
        if v.tokens.len() < SPECIALS.len() || v.tokens[..4] != SPECIALS {
            return Err(Error::Config("vocab dump does not start with the reserved tokens".into()));
        }
        Ok(v)
    }
}

/// Word, POS and dependency vocabularies of one training corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabs {
    pub words: Vocab,
    pub pos: Vocab,
    pub dep: Vocab,
}

impl Vocabs {
    /// Words come from sources and targets; tags from whichever examples carry them.
    pub fn build(examples: &[super::Example], word_max: usize, min_count: usize) -> Self {
        let words = examples.iter().flat_map(|e| e.source.iter().chain(&e.target));
        let pos = examples.iter().flat_map(|e| e.pos.iter().flatten());
        let dep = examples.iter().flat_map(|e| e.dep.iter().flatten());
        Vocabs {
            words: Vocab::build(words, word_max, min_count),
            pos: Vocab::build(pos, POS_VOCAB_MAX, 1),
            dep: Vocab::build(dep, DEP_VOCAB_MAX, 1),
        }
    }

    pub fn batch(&self, examples: &[super::Example]) -> super::Batch {
        super::make_batch(examples, &self.words, &self.pos, &self.dep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn frequency_order() {
        let v = Vocab::build(&toks("a b a a"), 10, 1);
        assert_eq!(v.tokens(), &toks("<pad> <unk> <s> </s> a b"));
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = Vocab::build(&toks("b a b a"), 10, 1);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
    }

    #[test]
    fn truncation_keeps_most_frequent() {
        let v = Vocab::build(&toks("a b b c"), 5, 1);
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(4), Some("b"));
        assert_eq!(v.id_or_unk("a"), UNK);
    }

    #[test]
    fn min_count_filters() {
        let v = Vocab::build(&toks("a b b"), 10, 2);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), None);
    }

    #[test]
    fn dump_round_trip() {
        let v = Vocab::build(&toks("x y y z"), 10, 1);
        let back = Vocab::parse_dump(&v.dump()).unwrap();
        assert_eq!(v, back);
        assert!(v.dump().starts_with("<pad>\t0\n<unk>\t1\n"));
    }

    #[test]
    fn bijection() {
        let v = Vocab::build(&toks("q w e r t y q q w"), 8, 1);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
        }
    }
}
