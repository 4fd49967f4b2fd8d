//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is a plain value: constructed once, validated, compared.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A whitespace token of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub index: usize,
    pub surface: String,
}

/// Inclusive token range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Span {
        assert!(start <= end, "span start {start} after end {end}");
        Span { start, end }
    }

    pub fn single(index: usize) -> Span {
        Span { start: index, end: index }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// True when `other` begins right after `self` ends.
    pub fn abuts(&self, other: &Span) -> bool {
        self.end + 1 == other.start
    }

    pub fn union(&self, other: &Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{{{}}}", self.start)
        } else {
            write!(f, "{{{}..{}}}", self.start, self.end)
        }
    }
}

/// Sentiment polarity. `None` (label 3) is the per-step default and never
/// appears in annotated triplets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Pos,
    Neg,
    Neu,
    None,
}

impl Polarity {
    pub const ALL: [Polarity; 4] = [Polarity::Pos, Polarity::Neg, Polarity::Neu, Polarity::None];
    pub const COUNT: usize = 4;

    pub fn label(self) -> usize {
        match self {
            Polarity::Pos => 0,
            Polarity::Neg => 1,
            Polarity::Neu => 2,
            Polarity::None => 3,
        }
    }

    pub fn from_label(label: usize) -> Option<Polarity> {
        Polarity::ALL.get(label).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Pos => "POS",
            Polarity::Neg => "NEG",
            Polarity::Neu => "NEU",
            Polarity::None => "NONE",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "POS" => Ok(Polarity::Pos),
            "NEG" => Ok(Polarity::Neg),
            "NEU" => Ok(Polarity::Neu),
            "NONE" => Ok(Polarity::None),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

/// The seven transitions. Discriminants are the stable numeric ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    /// SF
    Shift = 0,
    /// ST
    Stop = 1,
    /// M
    Merge = 2,
    /// L_n
    LeftRemove = 3,
    /// R_n
    RightRemove = 4,
    /// LR
    LeftRelation = 5,
    /// RR
    RightRelation = 6,
}

impl Action {
    pub const COUNT: usize = 7;
    pub const ALL: [Action; 7] = [
        Action::Shift,
        Action::Stop,
        Action::Merge,
        Action::LeftRemove,
        Action::RightRemove,
        Action::LeftRelation,
        Action::RightRelation,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Action> {
        Action::ALL.get(id).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Action::Shift => "SF",
            Action::Stop => "ST",
            Action::Merge => "M",
            Action::LeftRemove => "L_n",
            Action::RightRemove => "R_n",
            Action::LeftRelation => "LR",
            Action::RightRelation => "RR",
        }
    }

    pub fn is_relation(self) -> bool {
        matches!(self, Action::LeftRelation | Action::RightRelation)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.symbol().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

/// An annotated (aspect, opinion, polarity) triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoldTriplet {
    pub aspect: Span,
    pub opinion: Span,
    pub polarity: Polarity,
}

impl GoldTriplet {
    pub fn new(aspect: Span, opinion: Span, polarity: Polarity) -> GoldTriplet {
        GoldTriplet {
            aspect,
            opinion,
            polarity,
        }
    }

    pub fn pair(&self) -> (Span, Span) {
        (self.aspect, self.opinion)
    }
}

/// A tokenized sentence with its (possibly empty) gold annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    id: String,
    tokens: Vec<Token>,
    triplets: Vec<GoldTriplet>,
}

impl Sentence {
    /// Validates and builds a sentence. Tokens are numbered in order.
    pub fn new<S: AsRef<str>>(
        id: impl Into<String>,
        surfaces: &[S],
        triplets: Vec<GoldTriplet>,
    ) -> Result<Sentence> {
        if surfaces.is_empty() {
            return Err(Error::InvalidSentence("sentence has no tokens".into()));
        }
        let mut tokens = Vec::with_capacity(surfaces.len());
        for (index, surface) in surfaces.iter().enumerate() {
            let surface = surface.as_ref();
            if surface.is_empty() || surface.chars().any(char::is_whitespace) {
                return Err(Error::InvalidSentence(format!(
                    "token {index} is empty or contains whitespace"
                )));
            }
            tokens.push(Token {
                index,
                surface: surface.to_string(),
            });
        }
        let n = tokens.len();
        for t in &triplets {
            for span in [t.aspect, t.opinion] {
                if span.end >= n {
                    return Err(Error::OutOfBounds { index: span.end, len: n });
                }
            }
            if t.aspect.overlaps(&t.opinion) {
                return Err(Error::Overlap);
            }
            if t.polarity == Polarity::None {
                return Err(Error::InvalidSentence(
                    "annotated triplet carries NONE polarity".into(),
                ));
            }
        }
        Ok(Sentence {
            id: id.into(),
            tokens,
            triplets,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn triplets(&self) -> &[GoldTriplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surface(&self, index: usize) -> &str {
        &self.tokens[index].surface
    }

    /// Surface text of a span, tokens joined by single spaces.
    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.start..=span.end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Copy of the sentence under a different id.
    pub fn with_id(&self, id: impl Into<String>) -> Sentence {
        Sentence {
            id: id.into(),
            ..self.clone()
        }
    }
}

/// Validated constructor for sentences.
pub fn make_sentence<S: AsRef<str>>(
    id: impl Into<String>,
    surfaces: &[S],
    triplets: Vec<GoldTriplet>,
) -> Result<Sentence> {
    Sentence::new(id, surfaces, triplets)
}

/// A contiguous span living on the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constituent {
    pub span: Span,
    pub merged: bool,
}

impl Constituent {
    pub fn token(index: usize) -> Constituent {
        Constituent {
            span: Span::single(index),
            merged: false,
        }
    }

    pub fn merge(left: &Constituent, right: &Constituent) -> Constituent {
        Constituent {
            span: left.span.union(&right.span),
            merged: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// Aspect to the right of the opinion (formed by LR).
    Left,
    /// Aspect to the left of the opinion (formed by RR).
    Right,
}

/// A formed aspect/opinion link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairRelation {
    pub aspect: Constituent,
    pub opinion: Constituent,
    pub direction: Direction,
    pub sentiment: Polarity,
}

impl PairRelation {
    /// Identity used for deduplication; sentiment is not part of it.
    pub fn key(&self) -> (Span, Span, Direction) {
        (self.aspect.span, self.opinion.span, self.direction)
    }

    pub fn pair(&self) -> (Span, Span) {
        (self.aspect.span, self.opinion.span)
    }
}

/// Parser configuration: stack, buffer, the three output sets and the
/// history of applied actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserState {
    pub stack: Vec<Constituent>,
    pub buffer: VecDeque<usize>,
    pub aspects: BTreeSet<Constituent>,
    pub opinions: BTreeSet<Constituent>,
    pub relations: Vec<PairRelation>,
    pub history: Vec<Action>,
    /// Number of tokens discarded by L_n / R_n / ST.
    pub removed: usize,
    len: usize,
}

impl ParserState {
    /// All tokens in the buffer, everything else empty.
    pub fn initial(len: usize) -> ParserState {
        ParserState {
            stack: Vec::new(),
            buffer: (0..len).collect(),
            aspects: BTreeSet::new(),
            opinions: BTreeSet::new(),
            relations: Vec::new(),
            history: Vec::new(),
            removed: 0,
            len,
        }
    }

    pub fn sentence_len(&self) -> usize {
        self.len
    }

    /// Top of the stack (`stack[-1]`).
    pub fn top(&self) -> Option<&Constituent> {
        self.stack.last()
    }

    /// Second from the top (`stack[-2]`).
    pub fn second(&self) -> Option<&Constituent> {
        self.stack.len().checked_sub(2).map(|i| &self.stack[i])
    }

    pub fn top_two(&self) -> Option<(&Constituent, &Constituent)> {
        Some((self.second()?, self.top()?))
    }

    pub fn has_relation(&self, key: (Span, Span, Direction)) -> bool {
        self.relations.iter().any(|r| r.key() == key)
    }

    /// Tokens currently accounted for: buffer, stack and removed.
    pub fn conserved_count(&self) -> usize {
        self.buffer.len() + self.stack.iter().map(|c| c.span.len()).sum::<usize>() + self.removed
    }
}

/// One recorded transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    /// 1-based step number.
    pub step: usize,
    pub action: Action,
    pub sentiment: Polarity,
    pub before: ParserState,
    pub after: ParserState,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gourmet() -> Result<Sentence> {
        make_sentence(
            "s1",
            &["Gourmet", "food", "is", "delicious"],
            vec![GoldTriplet::new(Span::new(0, 1), Span::single(3), Polarity::Pos)],
        )
    }

    #[test]
    fn builds_annotated_sentence() {
        let s = gourmet().unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.triplets().len(), 1);
        assert_eq!(s.span_text(Span::new(0, 1)), "Gourmet food");
        assert!(s.tokens().iter().enumerate().all(|(i, t)| t.index == i));
    }

    #[test]
    fn builds_minimal_sentence() {
        let s = make_sentence("s2", &["ok"], vec![]).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.triplets().is_empty());
    }

    #[test]
    fn rejects_overlap_and_out_of_bounds() {
        let overlap = make_sentence(
            "s3",
            &["a", "b"],
            vec![GoldTriplet::new(Span::single(0), Span::single(0), Polarity::Pos)],
        );
        assert!(matches!(overlap, Err(Error::Overlap)));

        let oob = make_sentence(
            "s4",
            &["a"],
            vec![GoldTriplet::new(Span::single(0), Span::single(2), Polarity::Pos)],
        );
        assert!(matches!(oob, Err(Error::OutOfBounds { index: 2, len: 1 })));
    }

    #[test]
    fn rejects_none_polarity_and_empty_input() {
        let none = make_sentence(
            "s",
            &["a", "b"],
            vec![GoldTriplet::new(Span::single(0), Span::single(1), Polarity::None)],
        );
        assert!(matches!(none, Err(Error::InvalidSentence(_))));
        let empty: Vec<&str> = vec![];
        assert!(make_sentence("e", &empty, vec![]).is_err());
    }

    #[test]
    fn action_ids_round_trip() {
        for k in 0..Action::COUNT {
            assert_eq!(Action::from_id(k).unwrap().id(), k);
        }
        assert_eq!(Action::from_id(7), None);
        assert_eq!("R_n".parse::<Action>().unwrap(), Action::RightRemove);
    }

    #[test]
    fn polarity_labels() {
        assert_eq!(Polarity::None.label(), 3);
        for p in Polarity::ALL {
            assert_eq!(Polarity::from_label(p.label()), Some(p));
            assert_eq!(p.as_str().parse::<Polarity>().unwrap(), p);
        }
    }
}
