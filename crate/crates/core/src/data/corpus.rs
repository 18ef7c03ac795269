use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One source/headline pair, optionally carrying aligned POS and
/// dependency-label sequences for the source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source: Vec<String>,
    pub target: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep: Option<Vec<String>>,
}

impl Example {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.source.is_empty() {
            return Err("empty source".into());
        }
        if self.target.is_empty() {
            return Err("empty target".into());
        }
        for (name, tags) in [("pos", &self.pos), ("dep", &self.dep)] {
            if let Some(t) = tags {
                if t.len() != self.source.len() {
                    return Err(format!(
                        "{name} has {} tags for {} source tokens",
                        t.len(),
                        self.source.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct LoadReport {
    pub examples: Vec<Example>,
    /// `(line number, reason)` for every skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Parses JSON-lines text. Blank lines are ignored; malformed lines are
/// skipped and reported, but more than 10% malformed is fatal.
pub fn parse_corpus(text: &str, origin: &Path) -> Result<LoadReport> {
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<Example>(line)
            .map_err(|e| e.to_string())
            .and_then(|ex| ex.validate().map(|_| ex));
        match parsed {
            Ok(ex) => examples.push(ex),
            Err(reason) => {
                log::warn!("{}:{}: skipped: {reason}", origin.display(), i + 1);
                skipped.push((i + 1, reason));
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyCorpus(origin.display().to_string()));
    }
    if skipped.len() * 10 > total {
        return Err(Error::MalformedCorpus {
            path: origin.to_path_buf(),
            skipped: skipped.len(),
            total,
        });
    }
    Ok(LoadReport { examples, skipped })
}

pub fn load_corpus(path: &Path) -> Result<LoadReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadReport> {
        parse_corpus(text, Path::new("mem"))
    }

    #[test]
    fn schema_line() {
        let r = parse(r#"{"source":["a","b"],"target":["a"],"pos":["DT","NN"],"dep":["det","root"]}"#).unwrap();
        assert_eq!(r.examples.len(), 1);
        assert_eq!(r.examples[0].pos.as_deref().unwrap()[1], "NN");
    }

    #[test]
    fn tags_are_optional() {
        let r = parse(r#"{"source":["a"],"target":["a"]}"#).unwrap();
        assert!(r.examples[0].pos.is_none());
    }

    #[test]
    fn misaligned_tags_skipped() {
        let mut text = String::new();
        for _ in 0..10 {
            text.push_str(r#"{"source":["a","b"],"target":["a"]}"#);
            text.push('\n');
        }
        text.push_str(r#"{"source":["a","b"],"target":["a"],"pos":["DT"]}"#);
        let r = parse(&text).unwrap();
        assert_eq!(r.examples.len(), 10);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].0, 11);
    }

    #[test]
    fn missing_field_skipped_and_too_many_is_fatal() {
        let text = "{\"source\":[\"a\"]}\n{\"source\":[\"a\"],\"target\":[\"a\"]}\n";
        assert!(matches!(parse(text), Err(Error::MalformedCorpus { skipped: 1, total: 2, .. })));
    }

    #[test]
    fn empty_file() {
        let err = parse("").unwrap_err();
        assert!(err.to_string().contains("empty corpus"));
        assert!(matches!(parse("\n\n"), Err(Error::EmptyCorpus(_))));
    }
}
