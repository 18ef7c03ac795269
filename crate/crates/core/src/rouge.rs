//! ROUGE-1, ROUGE-2 and ROUGE-L over token sequences.
//!
//! Tokens match by exact string identity. Corpus scores are the mean of
//! per-pair scores.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand: usize, reference: usize) -> Self {
        let ratio = |d: usize| if d == 0 { 0.0 } else { overlap as f64 / d as f64 };
        let (p, r) = (ratio(cand), ratio(reference));
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        RougeScore {
            precision: p,
            recall: r,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RougeMetric {
    #[serde(rename = "rouge-1")]
    Rouge1,
    #[serde(rename = "rouge-2")]
    Rouge2,
    #[serde(rename = "rouge-l")]
    RougeL,
}

impl RougeMetric {
    pub fn name(self) -> &'static str {
        match self {
            RougeMetric::Rouge1 => "rouge-1",
            RougeMetric::Rouge2 => "rouge-2",
            RougeMetric::RougeL => "rouge-l",
        }
    }

    pub fn score<T: Eq + Hash>(self, cand: &[T], reference: &[T]) -> RougeScore {
        match self {
            RougeMetric::Rouge1 => rouge_n(cand, reference, 1),
            RougeMetric::Rouge2 => rouge_n(cand, reference, 2),
            RougeMetric::RougeL => rouge_l(cand, reference),
        }
    }
}

impl std::str::FromStr for RougeMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rouge-1" => Ok(RougeMetric::Rouge1),
            "rouge-2" => Ok(RougeMetric::Rouge2),
            "rouge-l" => Ok(RougeMetric::RougeL),
            _ => Err(Error::Config(format!("unknown ROUGE metric `{s}` (rouge-1, rouge-2, rouge-l)"))),
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap. `n == 0` scores zero.
pub fn rouge_n<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> RougeScore {
    if n == 0 {
        return RougeScore::default();
    }
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    let total = |t: &[T]| t.len().saturating_sub(n - 1);
    RougeScore::from_counts(overlap, total(cand), total(reference))
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(cand: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(cand, reference), cand.len(), reference.len())
}

/// Per-metric corpus means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusRouge {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

/// Mean of per-pair precision, recall and F1 for each metric.
pub fn corpus_rouge<T: Eq + Hash>(cands: &[Vec<T>], refs: &[Vec<T>]) -> Result<CorpusRouge> {
    if cands.len() != refs.len() {
        return Err(Error::LengthMismatch {
            what: "candidates vs references",
            left: cands.len(),
            right: refs.len(),
        });
    }
    let n = cands.len().max(1) as f64;
    let mut out = CorpusRouge::default();
    for (c, r) in cands.iter().zip(refs) {
        for (acc, s) in [
            (&mut out.r1, rouge_n(c, r, 1)),
            (&mut out.r2, rouge_n(c, r, 2)),
            (&mut out.rl, rouge_l(c, r)),
        ] {
            acc.precision += s.precision / n;
            acc.recall += s.recall / n;
            acc.f1 += s.f1 / n;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn hand_cases() {
        let (c, r) = (toks("the cat sat"), toks("the cat ate"));
        let s1 = rouge_n(&c, &r, 1);
        assert!(close(s1.precision, 2.0 / 3.0) && close(s1.recall, 2.0 / 3.0) && close(s1.f1, 2.0 / 3.0));
        let s2 = rouge_n(&c, &r, 2);
        assert!(close(s2.precision, 0.5) && close(s2.recall, 0.5) && close(s2.f1, 0.5));
        let l = rouge_l(&toks("a c b"), &toks("a b c"));
        assert!(close(l.precision, 2.0 / 3.0) && close(l.recall, 2.0 / 3.0));
    }

    #[test]
    fn degenerate_inputs() {
        let empty: Vec<&str> = vec![];
        assert_eq!(rouge_l(&empty, &toks("a b")), RougeScore::default());
        assert_eq!(rouge_n(&toks("a"), &toks("a"), 2), RougeScore::default());
        let same = toks("x y z");
        assert_eq!(rouge_l(&same, &same).f1, 1.0);
        assert_eq!(rouge_n(&same, &same, 2).f1, 1.0);
    }

    #[test]
    fn clipping() {
        let s = rouge_n(&toks("the the the"), &toks("the cat"), 1);
        assert!(close(s.precision, 1.0 / 3.0) && close(s.recall, 0.5));
    }

    #[test]
    fn corpus_means() {
        let cands = vec![toks("the cat sat"), toks("a c b")];
        let refs = vec![toks("the cat ate"), toks("a b c")];
        let c = corpus_rouge(&cands, &refs).unwrap();
        // R-1: 2/3 and 1; R-2: 1/2 and 0; R-L: 2/3 and 2/3
        assert!(close(c.r1.f1, (2.0 / 3.0 + 1.0) / 2.0));
        assert!(close(c.r2.f1, 0.25));
        assert!(close(c.rl.f1, 2.0 / 3.0));
        let single = corpus_rouge(&cands[..1], &refs[..1]).unwrap();
        assert_eq!(single.r1, rouge_n(&cands[0], &refs[0], 1));
        let twice = corpus_rouge(&[cands.clone(), cands.clone()].concat(), &[refs.clone(), refs.clone()].concat()).unwrap();
        assert!(close(twice.r1.f1, c.r1.f1) && close(twice.rl.f1, c.rl.f1));
        assert!(corpus_rouge(&cands, &refs[..1]).is_err());
    }

    /// Longest common subsequence by enumerating every subsequence of `a`.
    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        let is_subseq = |s: &[u8]| {
            let mut it = b.iter();
            s.iter().all(|x| it.any(|y| y == x))
        };
        (0u32..1 << a.len())
            .filter_map(|mask| {
                let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
                is_subseq(&s).then_some(s.len())
            })
            .max()
            .unwrap_or(0)
    }

    /// Clipped overlap by greedy one-to-one matching of identical n-grams.
    fn brute_overlap(a: &[u8], b: &[u8], n: usize) -> usize {
        if a.len() < n || b.len() < n {
            return 0;
        }
        let mut used = vec![false; b.len() - n + 1];
        let mut hits = 0;
        for i in 0..=a.len() - n {
            if let Some(j) = (0..used.len()).find(|&j| !used[j] && a[i..i + n] == b[j..j + n]) {
                used[j] = true;
                hits += 1;
            }
        }
        hits
    }

    fn f1(overlap: usize, c: usize, r: usize) -> f64 {
        if overlap == 0 {
            return 0.0;
        }
        let (p, r) = (overlap as f64 / c as f64, overlap as f64 / r as f64);
        2.0 * p * r / (p + r)
    }

    #[test]
    fn agrees_with_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mut draw = || -> Vec<u8> {
                let len = rng.gen_range(0..=8);
                (0..len).map(|_| rng.gen_range(0..4)).collect()
            };
            let (a, b) = (draw(), draw());
            let l = brute_lcs(&a, &b);
            assert_eq!(lcs_len(&a, &b), l);
            assert_eq!(rouge_l(&a, &b).f1, f1(l, a.len(), b.len()));
            for n in [1, 2] {
                let o = brute_overlap(&a, &b, n);
                let s = rouge_n(&a, &b, n);
                let cnt = |t: &[u8]| t.len().saturating_sub(n - 1);
                assert_eq!(s.f1, f1(o, cnt(&a), cnt(&b)), "{a:?} {b:?} n={n}");
            }
        }
    }

    proptest! {
        #[test]
        fn precision_recall_swap(a in prop::collection::vec(0u8..5, 0..10), b in prop::collection::vec(0u8..5, 0..10)) {
            for n in [1, 2] {
                prop_assert_eq!(rouge_n(&a, &b, n).precision, rouge_n(&b, &a, n).recall);
            }
            prop_assert_eq!(rouge_l(&a, &b).precision, rouge_l(&b, &a).recall);
        }

        #[test]
        fn appending_reference_tokens_keeps_recall(
            a in prop::collection::vec(0u8..5, 0..8),
            b in prop::collection::vec(0u8..5, 1..8),
            k in 0usize..8,
        ) {
            let tok = b[k % b.len()];
            let mut longer = a.clone();
            longer.push(tok);
            prop_assert!(rouge_n(&longer, &b, 1).recall >= rouge_n(&a, &b, 1).recall);
            prop_assert!(rouge_l(&longer, &b).recall >= rouge_l(&a, &b).recall);
        }

        #[test]
        fn self_lcs_is_one(a in prop::collection::vec(0u8..5, 1..10)) {
            prop_assert_eq!(rouge_l(&a, &a).f1, 1.0);
        }
    }
}
