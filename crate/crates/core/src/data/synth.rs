//! Synthetic "headline extraction" corpus.
//!
//! Sources are clauses from a small grammar
//! `DT (JJ) NN (RB) VBZ DT (JJ) NN (IN DT NN)`, optionally followed by
//! `, and <clause>` or a final period. The target is the nouns and verbs of
//! the first clause in order, so every target token occurs in its source.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::Example;
use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_examples: usize,
    /// Upper bound on distinct words across the corpus.
    pub vocab_size: usize,
    pub max_src_len: usize,
    /// Replace each first-clause subject with a proper name that occurs in
    /// no other example (exercises copying of out-of-vocabulary words).
    pub unique_names: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_examples: 500,
            vocab_size: 60,
            max_src_len: 12,
            unique_names: false,
        }
    }
}

const DETS: [&str; 2] = ["the", "a"];
const PREPS: [&str; 3] = ["in", "on", "with"];
const FIXED: usize = DETS.len() + PREPS.len() + 3; // plus "and", ",", "."
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjs: Vec<String>,
    advs: Vec<String>,
}

fn pseudo_word(rng: &mut Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
    }
    w
}

fn fresh_words(rng: &mut Rng, n: usize, syllables: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn lexicon(rng: &mut Rng, vocab_size: usize, taken: &mut HashSet<String>) -> Lexicon {
    let open = vocab_size - FIXED;
    let nouns = (open * 2 / 5).max(1);
    let verbs = (open / 4).max(1);
    let adjs = (open / 5).max(1);
    let advs = open.saturating_sub(nouns + verbs + adjs).max(1);
    Lexicon {
        nouns: fresh_words(rng, nouns, 2, taken),
        verbs: fresh_words(rng, verbs, 2, taken),
        adjs: fresh_words(rng, adjs, 2, taken),
        advs: fresh_words(rng, advs, 2, taken),
    }
}

#[derive(Default)]
struct Sentence {
    words: Vec<String>,
    pos: Vec<String>,
    dep: Vec<String>,
    content: Vec<String>,
}

impl Sentence {
    fn push(&mut self, w: &str, pos: &str, dep: &str, content: bool) {
        self.words.push(w.to_string());
        self.pos.push(pos.to_string());
        self.dep.push(dep.to_string());
        if content {
            self.content.push(w.to_string());
        }
    }
}

struct ClausePlan {
    subj_adj: bool,
    adv: bool,
    obj_adj: bool,
    pp: bool,
}

impl ClausePlan {
    fn len(&self, named: bool) -> usize {
        let subj = if named { 1 } else { 2 + self.subj_adj as usize };
        subj + self.adv as usize + 1 + 2 + self.obj_adj as usize + 3 * self.pp as usize
    }

    /// Drops optional slots until the clause fits in `budget` tokens.
    fn shrink_to(&mut self, budget: usize, named: bool) {
        let order: [fn(&mut Self); 4] = [
            |p| p.pp = false,
            |p| p.obj_adj = false,
            |p| p.adv = false,
            |p| p.subj_adj = false,
        ];
        for drop in order {
            if self.len(named) <= budget {
                break;
            }
            drop(self);
        }
    }
}

fn plan(rng: &mut Rng) -> ClausePlan {
    ClausePlan {
        subj_adj: rng.gen_bool(0.4),
        adv: rng.gen_bool(0.3),
        obj_adj: rng.gen_bool(0.4),
        pp: rng.gen_bool(0.3),
    }
}

fn emit_clause(
    s: &mut Sentence,
    rng: &mut Rng,
    lex: &Lexicon,
    p: &ClausePlan,
    first: bool,
    name: Option<&str>,
) {
    let c = first;
    let pick = |rng: &mut Rng, pool: &[String]| pool.choose(rng).unwrap().clone();
    match name {
        Some(n) => s.push(n, "NNP", "nsubj", c),
        None => {
            s.push(DETS.choose(rng).unwrap(), "DT", "det", false);
            if p.subj_adj {
                s.push(&pick(rng, &lex.adjs), "JJ", "amod", false);
            }
            s.push(&pick(rng, &lex.nouns), "NN", "nsubj", c);
        }
    }
    if p.adv {
        s.push(&pick(rng, &lex.advs), "RB", "advmod", false);
    }
    s.push(&pick(rng, &lex.verbs), "VBZ", if first { "root" } else { "conj" }, c);
    s.push(DETS.choose(rng).unwrap(), "DT", "det", false);
    if p.obj_adj {
        s.push(&pick(rng, &lex.adjs), "JJ", "amod", false);
    }
    s.push(&pick(rng, &lex.nouns), "NN", "dobj", c);
    if p.pp {
        s.push(PREPS.choose(rng).unwrap(), "IN", "prep", false);
        s.push(DETS.choose(rng).unwrap(), "DT", "det", false);
        s.push(&pick(rng, &lex.nouns), "NN", "pobj", c);
    }
}

/// Deterministic corpus for a given configuration.
pub fn gen_synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<Example>> {
    let min_len = if cfg.unique_names { 4 } else { 5 };
    if cfg.n_examples == 0 || cfg.max_src_len < min_len || cfg.vocab_size < FIXED + 4 {
        return Err(Error::invalid(
            "gen-synthetic-corpus",
            format!(
                "need n_examples > 0, max_src_len >= {min_len}, vocab_size >= {}",
                FIXED + 4
            ),
        ));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut taken: HashSet<String> = DETS.iter().chain(PREPS.iter()).map(|s| s.to_string()).collect();
    let lex = lexicon(&mut rng, cfg.vocab_size, &mut taken);
    let names = if cfg.unique_names {
        fresh_words(&mut rng, cfg.n_examples, 3, &mut taken)
    } else {
        Vec::new()
    };

    let mut out = Vec::with_capacity(cfg.n_examples);
    for i in 0..cfg.n_examples {
        let name = names.get(i).map(String::as_str);
        let mut s = Sentence::default();
        let mut first = plan(&mut rng);
        first.shrink_to(cfg.max_src_len, name.is_some());
        emit_clause(&mut s, &mut rng, &lex, &first, true, name);

        let mut second = plan(&mut rng);
        if rng.gen_bool(0.5) {
            let room = cfg.max_src_len - s.words.len();
            second.shrink_to(room.saturating_sub(2), false);
            if second.len(false) + 2 <= room {
                s.push(",", ",", "punct", false);
                s.push("and", "CC", "cc", false);
                emit_clause(&mut s, &mut rng, &lex, &second, false, None);
            }
        }
        if s.words.len() < cfg.max_src_len && rng.gen_bool(0.5) {
            s.push(".", ".", "punct", false);
        }
        out.push(Example {
            target: s.content,
            source: s.words,
            pos: Some(s.pos),
            dep: Some(s.dep),
        });
    }
    Ok(out)
}
