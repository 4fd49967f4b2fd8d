//! Vocabulary for the lookup table and the external token-vector file.
//!
//! Vector file layout (UTF-8, one row per token):
//!
//! ```text
//! dim=<d> count=<n>
//! <sentence_id>\t<token_index>\t<d space-separated floats>
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::Sentence;

pub const UNK: &str = "<unk>";

/// Token-to-row mapping. Row 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_words(std::iter::empty::<String>())
    }
}

impl Vocab {
    /// Builds from words in first-seen order; duplicates and `<unk>` are
    /// dropped.
    pub fn from_words<I, S>(words: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            words: vec![UNK.to_string()],
            index: HashMap::from([(UNK.to_string(), 0)]),
        };
        for w in words {
            let w = w.into();
            if !vocab.index.contains_key(&w) {
                vocab.index.insert(w.clone(), vocab.words.len());
                vocab.words.push(w);
            }
        }
        vocab
    }

    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Vocab {
        Vocab::from_words(
            sentences
                .into_iter()
                .flat_map(|s| s.tokens().iter().map(|t| t.surface.clone())),
        )
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Short content hash, stable across runs.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Precomputed per-token vectors keyed by (sentence id, token index).
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalVectors {
    dim: usize,
    rows: HashMap<(String, usize), Vec<f64>>,
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: 1,
        message: message.into(),
    }
}

impl ExternalVectors {
    pub fn new(dim: usize) -> ExternalVectors {
        ExternalVectors {
            dim,
            rows: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, sentence: &str, token: usize) -> Option<&[f64]> {
        self.rows.get(&(sentence.to_string(), token)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, sentence: &str, token: usize, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.rows.insert((sentence.to_string(), token), vector);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<ExternalVectors> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_error(1, "empty vector file"))?;
        let mut dim = None;
        let mut count = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("count", v)) => count = v.parse::<usize>().ok(),
                _ => return Err(parse_error(1, format!("unexpected header field {field:?}"))),
            }
        }
        let (Some(dim), Some(count)) = (dim, count) else {
            return Err(parse_error(1, "header must be `dim=<d> count=<n>`"));
        };
        let mut vectors = ExternalVectors::new(dim);
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.splitn(3, '\t');
            let (Some(sid), Some(idx), Some(values)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(parse_error(line_no, "expected <sentence_id>\\t<token_index>\\t<values>"));
            };
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| parse_error(line_no, format!("bad token index {idx:?}")))?;
            let values: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_error(line_no, format!("bad float: {e}")))?;
            vectors.insert(sid, idx, values)?;
        }
        if vectors.len() != count {
            return Err(parse_error(
                1,
                format!("header announces {count} rows, file has {}", vectors.len()),
            ));
        }
        Ok(vectors)
    }

    pub fn read(path: &Path) -> Result<ExternalVectors> {
        ExternalVectors::parse(&fs::read_to_string(path)?)
    }

    /// Text form, rows sorted by (sentence id, token index).
    pub fn to_text(&self) -> String {
        let mut keys: Vec<_> = self.rows.keys().collect();
        keys.sort();
        let mut out = format!("dim={} count={}\n", self.dim, self.rows.len());
        for key in keys {
            let values: Vec<String> = self.rows[key].iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}\t{}\t{}", key.0, key.1, values.join(" ")).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_reserves_unknown() {
        let v = Vocab::from_words(["a", "b", "a"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("zzz"), 0);
        assert_eq!(v.hash(), Vocab::from_words(["a", "b"]).hash());
        assert_ne!(v.hash(), Vocab::from_words(["b", "a"]).hash());
    }

    #[test]
    fn parses_vector_file() {
        let text = "dim=2 count=2\ns1\t0\t0.5 -1\ns1\t1\t1e-3 2\n";
        let v = ExternalVectors::parse(text).unwrap();
        assert_eq!(v.dim(), 2);
        assert_eq!(v.get("s1", 1), Some(&[1e-3, 2.0][..]));
        assert_eq!(ExternalVectors::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            ExternalVectors::parse("dim=3 count=1\ns\t0\t1 2\n"),
            Err(Error::DimMismatch { expected: 3, found: 2 })
        ));
        assert!(ExternalVectors::parse("dim=1 count=2\ns\t0\t1\n").is_err());
        assert!(ExternalVectors::parse("count=1\n").is_err());
        assert!(ExternalVectors::parse("dim=1 count=1\ns\tx\t1\n").is_err());
    }
}
