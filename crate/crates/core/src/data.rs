//! Corpus ingestion for line-oriented triplet files and fused corpora.
//!
//! One sentence per line:
//!
//! ```text
//! Gourmet food is delicious .####[([0, 1], [3], 'POS')]
//! ```
//!
//! The text before `####` is whitespace-tokenized. Index lists are 0-based
//! and must be contiguous. Whitespace inside the bracketed list is ignored.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{GoldTriplet, Polarity, Sentence, Span};

pub const SEPARATOR: &str = "####";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// A named collection of sentences from one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate sentence ids.
    pub fn new(name: impl Into<String>, split: Split, sentences: Vec<Sentence>) -> Result<Corpus> {
        let mut seen = HashSet::new();
        for s in &sentences {
            if !seen.insert(s.id()) {
                return Err(Error::InvalidSentence(format!("duplicate sentence id {:?}", s.id())));
            }
        }
        Ok(Corpus {
            name: name.into(),
            split,
            sentences,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn triplet_count(&self) -> usize {
        self.sentences.iter().map(|s| s.triplets().len()).sum()
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
    /// Column of `text[0]` within the full line, 1-based.
    base_column: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column: self.base_column + self.text[..self.pos].chars().count(),
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn eat(&mut self, expected: char) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == expected => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected {expected:?}, found {c:?}"))),
            None => Err(self.error(format!("expected {expected:?}, found end of line"))),
        }
    }

    fn try_eat(&mut self, expected: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(expected) {
            self.pos += expected.len_utf8();
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a token index"));
        }
        self.text[start..self.pos]
            .parse()
            .map_err(|_| self.error("token index too large"))
    }

    fn index_list(&mut self) -> Result<Span> {
        self.eat('[')?;
        let mut indices = vec![self.number()?];
        while self.try_eat(',') {
            indices.push(self.number()?);
        }
        self.eat(']')?;
        let contiguous = indices.windows(2).all(|w| w[1] == w[0] + 1);
        if !contiguous {
            return Err(Error::NonContiguous {
                line: self.line,
                indices,
            });
        }
        Ok(Span::new(indices[0], *indices.last().unwrap()))
    }

    fn polarity(&mut self) -> Result<Polarity> {
        self.skip_ws();
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => return Err(self.error("expected a quoted polarity")),
        };
        self.pos += 1;
        let start = self.pos;
        let end = self.text[start..]
            .find(quote)
            .map(|off| start + off)
            .ok_or_else(|| self.error("unterminated polarity string"))?;
        let word = &self.text[start..end];
        let polarity = match word {
            "POS" => Polarity::Pos,
            "NEG" => Polarity::Neg,
            "NEU" => Polarity::Neu,
            other => return Err(self.error(format!("unknown polarity {other:?}"))),
        };
        self.pos = end + 1;
        Ok(polarity)
    }

    fn triplet(&mut self) -> Result<GoldTriplet> {
        self.eat('(')?;
        let aspect = self.index_list()?;
        self.eat(',')?;
        let opinion = self.index_list()?;
        self.eat(',')?;
        let polarity = self.polarity()?;
        self.eat(')')?;
        Ok(GoldTriplet::new(aspect, opinion, polarity))
    }

    fn triplet_list(&mut self) -> Result<Vec<GoldTriplet>> {
        self.eat('[')?;
        let mut triplets = Vec::new();
        if !self.try_eat(']') {
            loop {
                triplets.push(self.triplet()?);
                if self.try_eat(']') {
                    break;
                }
                self.eat(',')?;
            }
        }
        self.skip_ws();
        if self.pos != self.text.len() {
            return Err(self.error("trailing characters after triplet list"));
        }
        Ok(triplets)
    }
}

/// Parses a triplet list such as `[([0, 1], [3], 'POS')]`.
pub fn parse_triplets(text: &str, line: usize) -> Result<Vec<GoldTriplet>> {
    Cursor {
        text,
        pos: 0,
        line,
        base_column: 1,
    }
    .triplet_list()
}

/// Parses one corpus line into a sentence with the given id.
pub fn parse_aste_line_with_id(line: &str, line_no: usize, id: impl Into<String>) -> Result<Sentence> {
    let line = line.trim_end_matches(['\r', '\n']);
    let Some(cut) = line.find(SEPARATOR) else {
        return Err(Error::Parse {
            line: line_no,
            column: line.chars().count() + 1,
            message: format!("missing {SEPARATOR} separator"),
        });
    };
    let tokens: Vec<&str> = line[..cut].split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::Parse {
            line: line_no,
            column: 1,
            message: "sentence has no tokens".into(),
        });
    }
    let rest = &line[cut + SEPARATOR.len()..];
    let triplets = Cursor {
        text: rest,
        pos: 0,
        line: line_no,
        base_column: line[..cut + SEPARATOR.len()].chars().count() + 1,
    }
    .triplet_list()?;
    Sentence::new(id, &tokens, triplets)
}

/// Parses a single line; the sentence id is `"1"`.
pub fn parse_aste_line(line: &str) -> Result<Sentence> {
    parse_aste_line_with_id(line, 1, "1")
}

fn format_span(span: Span) -> String {
    let parts: Vec<String> = span.indices().map(|i| i.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

pub fn format_triplets<'a>(triplets: impl IntoIterator<Item = &'a GoldTriplet>) -> String {
    let parts: Vec<String> = triplets
        .into_iter()
        .map(|t| {
            format!(
                "({}, {}, '{}')",
                format_span(t.aspect),
                format_span(t.opinion),
                t.polarity
            )
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

/// Renders a sentence in the corpus line grammar.
pub fn serialize_sentence(sentence: &Sentence) -> String {
    let text: Vec<&str> = sentence.tokens().iter().map(|t| t.surface.as_str()).collect();
    format!("{}{SEPARATOR}{}", text.join(" "), format_triplets(sentence.triplets()))
}

pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        out.push_str(&serialize_sentence(s));
        out.push('\n');
    }
    out
}

/// Parses file contents; sentence ids are 1-based line numbers. Blank lines
/// are skipped.
pub fn parse_corpus(name: &str, split: Split, contents: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        sentences.push(parse_aste_line_with_id(line, line_no, line_no.to_string())?);
    }
    Corpus::new(name, split, sentences)
}

pub fn read_corpus(path: &Path, name: &str, split: Split) -> Result<Corpus> {
    let contents = fs::read_to_string(path)?;
    parse_corpus(name, split, &contents)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    fs::write(path, serialize_corpus(corpus))?;
    Ok(())
}

/// Locates the file for `split` in a dataset directory. Accepts the common
/// `train_triplets.txt` naming as well as plain `train.txt`.
pub fn split_file(dir: &Path, split: Split) -> Option<PathBuf> {
    [
        format!("{}_triplets.txt", split.as_str()),
        format!("{}.txt", split.as_str()),
    ]
    .into_iter()
    .map(|f| dir.join(f))
    .find(|p| p.is_file())
}

/// Loads every split present in a dataset directory. The dataset is named
/// after the directory.
pub fn load_dataset(dir: &Path) -> Result<Vec<Corpus>> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".to_string());
    let mut corpora = Vec::new();
    for split in Split::ALL {
        if let Some(path) = split_file(dir, split) {
            corpora.push(read_corpus(&path, &name, split)?);
        }
    }
    if corpora.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no split files found in {}", dir.display()),
        )));
    }
    Ok(corpora)
}

/// Concatenates corpora of the same split; ids become `<origin>:<id>`.
pub fn build_fused(corpora: &[Corpus]) -> Result<Corpus> {
    let first = corpora.first().ok_or(Error::EmptyCorpus)?;
    let mut sentences = Vec::with_capacity(corpora.iter().map(Corpus::len).sum());
    for c in corpora {
        if c.split != first.split {
            return Err(Error::MixedSplits(first.split.to_string(), c.split.to_string()));
        }
        sentences.extend(c.sentences.iter().map(|s| s.with_id(format!("{}:{}", c.name, s.id()))));
    }
    Corpus::new("fused", first.split, sentences)
}
