//! Exact-match precision/recall/F1 for pair and triplet extraction.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::types::{GoldTriplet, Polarity, Sentence, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// (aspect, opinion) pairs; sentiment ignored.
    Aope,
    /// (aspect, opinion, polarity) triplets.
    Aste,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Aope => "aope",
            Task::Aste => "aste",
        }
    }
}

/// Percentages in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl fmt::Display for Scores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P={:.2} R={:.2} F1={:.2}", self.precision, self.recall, self.f1)
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Predicted triplets for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePrediction {
    pub id: String,
    pub triplets: Vec<GoldTriplet>,
}

type Key = (Span, Span, Option<Polarity>);

fn keys(triplets: &[GoldTriplet], task: Task) -> BTreeSet<Key> {
    triplets
        .iter()
        .map(|t| {
            let polarity = match task {
                Task::Aope => None,
                Task::Aste => Some(t.polarity),
            };
            (t.aspect, t.opinion, polarity)
        })
        .collect()
}

/// Micro-averaged exact match over aligned sentences.
pub fn evaluate(predictions: &[SentencePrediction], gold: &[Sentence], task: Task) -> Result<Scores> {
    if predictions.len() != gold.len() {
        return Err(Error::IdMismatch(
            format!("{} predictions", predictions.len()),
            format!("{} gold sentences", gold.len()),
        ));
    }
    let (mut predicted, mut expected, mut correct) = (0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(gold) {
        if p.id != g.id() {
            return Err(Error::IdMismatch(p.id.clone(), g.id().to_string()));
        }
        let p = keys(&p.triplets, task);
        let g = keys(g.triplets(), task);
        predicted += p.len();
        expected += g.len();
        correct += p.intersection(&g).count();
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let precision = ratio(correct, predicted);
    let recall = ratio(correct, expected);
    Ok(Scores {
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

/// Pairs a predicted corpus with its gold counterpart: ids and tokens must
/// agree line by line.
pub fn align(predicted: &[Sentence], gold: &[Sentence]) -> Result<Vec<SentencePrediction>> {
    if predicted.len() != gold.len() {
        return Err(Error::IdMismatch(
            format!("{} predicted sentences", predicted.len()),
            format!("{} gold sentences", gold.len()),
        ));
    }
    predicted
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            if p.id() != g.id() || p.tokens() != g.tokens() {
                return Err(Error::IdMismatch(p.id().to_string(), g.id().to_string()));
            }
            Ok(SentencePrediction {
                id: p.id().to_string(),
                triplets: p.triplets().to_vec(),
            })
        })
        .collect()
}
