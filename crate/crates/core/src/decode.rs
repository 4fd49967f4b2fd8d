//! Greedy decoding, prediction sets and step-count measurements.

use std::collections::BTreeSet;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::eval::SentencePrediction;
use crate::scorer::{action_logits, sentiment_distribution, Model, SentenceEncoding};
use crate::transition::{apply_labeled, is_terminal, legal_actions, step_bound};
use crate::types::{Action, GoldTriplet, PairRelation, ParserState, Polarity, Sentence, TraceStep};

/// Scores for the decoder. Only the order of the values matters.
pub trait StepScorer {
    fn action_scores(&mut self, state: &ParserState) -> [f64; Action::COUNT];
    fn sentiment_scores(&mut self, state: &ParserState) -> [f64; Polarity::COUNT];
}

/// Scores from a trained model, featurizing each state once.
pub struct ModelScorer<'a> {
    encoding: SentenceEncoding<'a>,
    cached: Option<(usize, crate::scorer::StateFeatures)>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, sentence: &Sentence) -> ModelScorer<'a> {
        ModelScorer {
            encoding: SentenceEncoding::new(model.embed_tokens(sentence), &model.params),
            cached: None,
        }
    }

    fn features(&mut self, state: &ParserState) -> &crate::scorer::StateFeatures {
        let step = state.history.len();
        if self.cached.as_ref().is_none_or(|(s, _)| *s != step) {
            self.cached = Some((step, self.encoding.features(state)));
        }
        &self.cached.as_ref().unwrap().1
    }
}

impl StepScorer for ModelScorer<'_> {
    fn action_scores(&mut self, state: &ParserState) -> [f64; Action::COUNT] {
        let params = self.encoding_params();
        action_logits(self.features(state), params)
    }

    fn sentiment_scores(&mut self, state: &ParserState) -> [f64; Polarity::COUNT] {
        let params = self.encoding_params();
        sentiment_distribution(self.features(state), params)
    }
}

impl<'a> ModelScorer<'a> {
    fn encoding_params(&self) -> &'a crate::scorer::ScorerParams {
        self.encoding.params()
    }
}

/// Decoder output for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub relations: Vec<PairRelation>,
    pub trace: Vec<TraceStep>,
}

impl Prediction {
    pub fn actions(&self) -> Vec<Action> {
        self.trace.iter().map(|s| s.action).collect()
    }

    /// Distinct triplets in emission order.
    pub fn triplets(&self) -> Vec<GoldTriplet> {
        let mut seen = BTreeSet::new();
        self.relations
            .iter()
            .map(|r| GoldTriplet::new(r.aspect.span, r.opinion.span, r.sentiment))
            .filter(|t| seen.insert(*t))
            .collect()
    }

    pub fn to_sentence_prediction(&self) -> SentencePrediction {
        SentencePrediction {
            id: self.id.clone(),
            triplets: self.triplets(),
        }
    }
}

fn argmax_where(scores: &[f64], allowed: impl Fn(usize) -> bool) -> usize {
    let mut best: Option<usize> = None;
    for (i, &v) in scores.iter().enumerate() {
        if allowed(i) && best.is_none_or(|b| v > scores[b]) {
            best = Some(i);
        }
    }
    best.expect("at least one allowed entry")
}

/// Greedy decoding under any scorer. Ties go to the lower action id; relation
/// steps take the best sentiment other than NONE.
pub fn decode_with<S: StepScorer + ?Sized>(sentence: &Sentence, scorer: &mut S) -> Result<Prediction> {
    let cap = step_bound(sentence.len());
    let mut state = ParserState::initial(sentence.len());
    let mut trace = Vec::new();
    while !is_terminal(&state) {
        if trace.len() == cap {
            return Err(Error::StepCapExceeded { cap });
        }
        let legal = legal_actions(&state);
        let scores = scorer.action_scores(&state);
        let action = Action::from_id(argmax_where(&scores, |i| legal.contains(Action::ALL[i]))).unwrap();
        let sentiment = if action.is_relation() {
            let s = scorer.sentiment_scores(&state);
            Polarity::from_label(argmax_where(&s, |i| i != Polarity::None.label())).unwrap()
        } else {
            Polarity::None
        };
        let next = apply_labeled(&state, action, sentiment)?;
        trace.push(TraceStep {
            step: trace.len() + 1,
            action,
            sentiment,
            before: state,
            after: next.clone(),
        });
        state = next;
    }
    Ok(Prediction {
        id: sentence.id().to_string(),
        relations: state.relations,
        trace,
    })
}

pub fn decode(model: &Model, sentence: &Sentence) -> Result<Prediction> {
    decode_with(sentence, &mut ModelScorer::new(model, sentence))
}

/// Predictions for a corpus, in input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn decode_all(model: &Model, sentences: &[Sentence]) -> Result<PredictionSet> {
        let predictions = sentences.iter().map(|s| decode(model, s)).collect::<Result<_>>()?;
        Ok(PredictionSet { predictions })
    }

    pub fn sentence_predictions(&self) -> Vec<SentencePrediction> {
        self.predictions.iter().map(Prediction::to_sentence_prediction).collect()
    }

    /// Input sentences re-annotated with the predicted triplets.
    pub fn annotate(&self, sentences: &[Sentence]) -> Result<Vec<Sentence>> {
        self.predictions
            .iter()
            .zip(sentences)
            .map(|(p, s)| {
                let tokens: Vec<&str> = s.tokens().iter().map(|t| t.surface.as_str()).collect();
                Sentence::new(s.id(), &tokens, p.triplets())
            })
            .collect()
    }
}

/// One measured sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub id: String,
    pub n: usize,
    pub actions: usize,
    pub seconds: f64,
}

/// Action counts against sentence length, with a least-squares line.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub rows: Vec<ComplexityRow>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Sentences whose action count exceeded `6n + 3`.
    pub violations: usize,
}

/// Fits `y = slope * x + intercept`; returns (slope, intercept, R^2).
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    if points.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r_squared)
}

impl ComplexityReport {
    pub fn from_rows(rows: Vec<ComplexityRow>) -> ComplexityReport {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.actions as f64)).collect();
        let (slope, intercept, r_squared) = least_squares(&points);
        let violations = rows.iter().filter(|r| r.actions > step_bound(r.n)).count();
        ComplexityReport {
            rows,
            slope,
            intercept,
            r_squared,
            violations,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("id\tn\tactions\tbound\tmillis\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.3}\n",
                r.id,
                r.n,
                r.actions,
                step_bound(r.n),
                r.seconds * 1e3
            ));
        }
        out.push_str(&format!(
            "slope={:.4} intercept={:.4} r2={:.4} violations={}\n",
            self.slope, self.intercept, self.r_squared, self.violations
        ));
        out
    }
}

pub fn measure_complexity(model: &Model, sentences: &[Sentence]) -> Result<ComplexityReport> {
    let mut rows = Vec::with_capacity(sentences.len());
    for s in sentences {
        let started = Instant::now();
        let p = decode(model, s)?;
        rows.push(ComplexityRow {
            id: s.id().to_string(),
            n: s.len(),
            actions: p.trace.len(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ComplexityReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_aste_line;
    use crate::scorer::{Dims, Vocab};
    use crate::types::Span;

    /// Puts a fixed score on a scripted action per step.
    struct Rigged {
        script: Vec<Action>,
        sentiment: Polarity,
    }

    impl StepScorer for Rigged {
        fn action_scores(&mut self, state: &ParserState) -> [f64; Action::COUNT] {
            let mut s = [0.0; Action::COUNT];
            if let Some(a) = self.script.get(state.history.len()) {
                s[a.id()] = 5.0;
            }
            s
        }

        fn sentiment_scores(&mut self, _: &ParserState) -> [f64; Polarity::COUNT] {
            let mut s = [0.1; Polarity::COUNT];
            s[Polarity::None.label()] = 0.9;
            s[self.sentiment.label()] = 0.5;
            s
        }
    }

    fn gourmet() -> Sentence {
        parse_aste_line("Gourmet food is delicious####[([0,1],[3],'POS')]").unwrap()
    }

    fn dims() -> Dims {
        Dims { token: 6, action: 4, distance: 3, hidden: 5, sentiment_hidden: 4, max_distance: 10 }
    }

    #[test]
    fn rigged_scores_reproduce_the_gold_pair() {
        use Action::*;
        let s = gourmet();
        let script = vec![Shift, Shift, Merge, Shift, RightRemove, Shift, RightRelation, Stop];
        let mut r = Rigged { script: script.clone(), sentiment: Polarity::Pos };
        let p = decode_with(&s, &mut r).unwrap();
        assert_eq!(p.actions(), script);
        assert_eq!(p.triplets(), s.triplets());
    }

    #[test]
    fn ties_take_the_lowest_id() {
        let s = gourmet();
        let mut flat = Rigged { script: vec![], sentiment: Polarity::Neu };
        // With flat scores: SF while the buffer lasts, then ST.
        let p = decode_with(&s, &mut flat).unwrap();
        assert_eq!(p.actions(), [vec![Action::Shift; 4], vec![Action::Stop]].concat());
    }

    #[test]
    fn model_decoding_is_total_and_deterministic() {
        let s = parse_aste_line("nothing to see here at all####[]").unwrap();
        let model = Model::new(dims(), Vocab::from_sentences([&s]), 3).unwrap();
        let a = decode(&model, &s).unwrap();
        let b = decode(&model, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.trace.len() <= step_bound(s.len()));
        assert!(crate::transition::replay_matches(&a.trace));
        assert!(a.relations.iter().all(|r| r.sentiment != Polarity::None));
    }

    #[test]
    fn triplets_are_deduplicated() {
        let s = gourmet();
        let rel = PairRelation {
            aspect: crate::types::Constituent::token(0),
            opinion: crate::types::Constituent::token(3),
            direction: crate::types::Direction::Right,
            sentiment: Polarity::Pos,
        };
        let p = Prediction { id: s.id().into(), relations: vec![rel, rel], trace: vec![] };
        assert_eq!(p.triplets(), vec![GoldTriplet::new(Span::single(0), Span::single(3), Polarity::Pos)]);
    }

    #[test]
    fn least_squares_on_a_line() {
        let (m, b, r2) = least_squares(&[(1.0, 5.0), (2.0, 7.0), (3.0, 9.0)]);
        assert!((m - 2.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gourmet_step_count() {
        use Action::*;
        let s = gourmet();
        let mut r = Rigged {
            script: vec![Shift, Shift, Merge, Shift, RightRemove, Shift, RightRelation, Stop],
            sentiment: Polarity::Pos,
        };
        let n = decode_with(&s, &mut r).unwrap().trace.len();
        assert_eq!(n, 8);
        assert!(n <= step_bound(4));
        assert_eq!(step_bound(4), 27);
    }
}
