//! Summary quality measurements: repetition ratios, coarse POS-class
//! distributions and their squared error to gold, and per-length-bucket
//! metric means with Student-t confidence intervals.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// `len(X) - len(set(X))`
pub fn repeated_words<T: Eq + std::hash::Hash>(tokens: &[T]) -> usize {
    let distinct: HashSet<&T> = tokens.iter().collect();
    tokens.len() - distinct.len()
}

/// Inclusive range of generated-summary lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
}

impl Bucket {
    pub fn contains(&self, len: usize) -> bool {
        (self.lo..=self.hi).contains(&len)
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }
}

pub const DEFAULT_BUCKETS: [Bucket; 4] = [
    Bucket { lo: 1, hi: 5 },
    Bucket { lo: 6, hi: 10 },
    Bucket { lo: 11, hi: 15 },
    Bucket { lo: 16, hi: 20 },
];

pub fn check_buckets(buckets: &[Bucket]) -> Result<()> {
    let mut sorted = buckets.to_vec();
    sorted.sort_by_key(|b| b.lo);
    for b in &sorted {
        if b.lo > b.hi {
            return Err(Error::invalid("buckets", format!("empty range {}", b.label())));
        }
    }
    for w in sorted.windows(2) {
        if w[1].lo <= w[0].hi {
            return Err(Error::invalid("buckets", format!("{} overlaps {}", w[0].label(), w[1].label())));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRate {
    pub bucket: Bucket,
    pub n: usize,
    pub sum: f64,
    /// Absent for an empty bucket.
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub n: usize,
    /// Sum over pairs of `(1 + r(gen)) / (1 + r(gold))`.
    pub sum: f64,
    pub mean: f64,
    pub buckets: Vec<BucketRate>,
}

pub fn repetition_ratio<T: Eq + std::hash::Hash>(generated: &[T], gold: &[T]) -> f64 {
    (1 + repeated_words(generated)) as f64 / (1 + repeated_words(gold)) as f64
}

/// Repetition ratios per pair, summed, averaged and grouped by the
/// length of the generated summary.
pub fn repetition_rate<T: Eq + std::hash::Hash>(
    generated: &[Vec<T>],
    gold: &[Vec<T>],
    buckets: &[Bucket],
) -> Result<RepetitionReport> {
    if generated.len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "generated vs gold summaries",
            left: generated.len(),
            right: gold.len(),
        });
    }
    check_buckets(buckets)?;
    let ratios: Vec<f64> = generated.iter().zip(gold).map(|(g, r)| repetition_ratio(g, r)).collect();
    let sum: f64 = ratios.iter().sum();
    let rows = buckets
        .iter()
        .map(|&bucket| {
            let inside: Vec<f64> = ratios
                .iter()
                .zip(generated)
                .filter(|(_, g)| bucket.contains(g.len()))
                .map(|(r, _)| *r)
                .collect();
            let s: f64 = inside.iter().sum();
            BucketRate {
                bucket,
                n: inside.len(),
                sum: s,
                mean: (!inside.is_empty()).then(|| s / inside.len() as f64),
            }
        })
        .collect();
    Ok(RepetitionReport {
        n: ratios.len(),
        sum,
        mean: if ratios.is_empty() { 0.0 } else { sum / ratios.len() as f64 },
        buckets: rows,
    })
}

/// The nine coarse classes, in reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PosClass {
    NN,
    VV,
    JJ,
    RB,
    CD,
    DT,
    TO,
    IN,
    SYM,
}

impl PosClass {
    pub const ALL: [PosClass; 9] = [
        PosClass::NN,
        PosClass::VV,
        PosClass::JJ,
        PosClass::RB,
        PosClass::CD,
        PosClass::DT,
        PosClass::TO,
        PosClass::IN,
        PosClass::SYM,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for PosClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosClass::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown POS class `{s}`")))
    }
}

/// Fine tag to class. Tags outside the mapping count toward the total
/// but toward no class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagMapping(BTreeMap<String, PosClass>);

const DEFAULT_MAPPING: &[(PosClass, &[&str])] = &[
    (PosClass::NN, &["NN", "NNS", "NNP", "NNPS"]),
    (PosClass::VV, &["VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "MD"]),
    (PosClass::JJ, &["JJ", "JJR", "JJS"]),
    (PosClass::RB, &["RB", "RBR", "RBS"]),
    (PosClass::CD, &["CD"]),
    (PosClass::DT, &["DT", "PDT", "WDT"]),
    (PosClass::TO, &["TO"]),
    (PosClass::IN, &["IN"]),
    (
        PosClass::SYM,
        &["SYM", "#", "$", ",", ".", ":", "``", "''", "-LRB-", "-RRB-", "(", ")", "HYPH", "NFP"],
    ),
];

impl Default for TagMapping {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        for (class, tags) in DEFAULT_MAPPING {
            for t in *tags {
                m.insert(t.to_string(), *class);
            }
        }
        TagMapping(m)
    }
}

impl TagMapping {
    /// One `TAG CLASS` pair per line, whitespace separated; blank lines skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (None, ..) => continue,
                (Some(tag), Some(class), None) => {
                    m.insert(tag.to_string(), class.parse()?);
                }
                _ => return Err(Error::Config(format!("mapping line {}: expected `TAG CLASS`", i + 1))),
            }
        }
        Ok(TagMapping(m))
    }

    pub fn class(&self, tag: &str) -> Option<PosClass> {
        self.0.get(tag).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosClassDist {
    /// Percent of all generated tokens, indexed by [`PosClass::index`].
    pub proportions: [f64; 9],
    /// Fraction of tokens whose tag maps to some class.
    pub coverage: f64,
}

impl PosClassDist {
    pub fn get(&self, c: PosClass) -> f64 {
        self.proportions[c.index()]
    }

    pub fn from_percentages(proportions: [f64; 9]) -> Self {
        PosClassDist {
            proportions,
            coverage: 1.0,
        }
    }
}

/// Class proportions of the summaries' tags, relative to the number of
/// generated tokens.
pub fn pos_class_distribution(
    summaries: &[Vec<String>],
    tags: &[Vec<String>],
    mapping: &TagMapping,
) -> Result<PosClassDist> {
    if summaries.len() != tags.len() {
        return Err(Error::LengthMismatch {
            what: "summaries vs tag lines",
            left: summaries.len(),
            right: tags.len(),
        });
    }
    let mut counts = [0usize; 9];
    let mut total = 0;
    let mut mapped = 0;
    for (s, t) in summaries.iter().zip(tags) {
        if s.len() != t.len() {
            return Err(Error::LengthMismatch {
                what: "tokens vs tags in a summary",
                left: s.len(),
                right: t.len(),
            });
        }
        for tag in t {
            total += 1;
            if let Some(c) = mapping.class(tag) {
                counts[c.index()] += 1;
                mapped += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::NoTokens);
    }
    Ok(PosClassDist {
        proportions: counts.map(|c| 100.0 * c as f64 / total as f64),
        coverage: mapped as f64 / total as f64,
    })
}

/// Mean over the nine classes of the squared difference in percentage points.
pub fn pos_mse(a: &PosClassDist, b: &PosClassDist) -> f64 {
    a.proportions
        .iter()
        .zip(&b.proportions)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / 9.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub bucket: Bucket,
    pub n: usize,
    /// Absent for an empty bucket.
    pub mean: Option<f64>,
    /// Half-width of the 95% Student-t interval; absent when `n < 2`.
    pub ci95: Option<f64>,
}

/// Half-width of the two-sided 95% t interval for the mean of `xs`.
pub fn t_interval_95(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.975);
    Some(t * var.sqrt() / (n as f64).sqrt())
}

/// Groups `(length, score)` pairs into buckets and reports mean and 95% interval.
pub fn length_bucketed_metrics(items: &[(usize, f64)], buckets: &[Bucket]) -> Result<Vec<BucketStat>> {
    check_buckets(buckets)?;
    Ok(buckets
        .iter()
        .map(|&bucket| {
            let xs: Vec<f64> = items.iter().filter(|(l, _)| bucket.contains(*l)).map(|(_, s)| *s).collect();
            BucketStat {
                bucket,
                n: xs.len(),
                mean: (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
                ci95: t_interval_95(&xs),
            }
        })
        .collect())
}
