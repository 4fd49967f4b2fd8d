//! State featurization and the two output heads.
//!
//! The state vector is `r = [s_fwd; s_bwd; b_fwd; b_bwd; alpha; e_d]`: final
//! hidden states of two independent bidirectional LSTMs over the stack
//! constituents and the buffer tokens, the history LSTM over action
//! embeddings, and the distance embedding of the top two constituents.

pub mod lstm;
mod params;
mod vectors;

use ndarray::{s, Array1, Array2, ArrayView1};

pub use lstm::{Lstm, LstmState, Tape};
pub use params::{Dims, ScorerParams, TensorShape};
pub use vectors::{ExternalVectors, Vocab, UNK};

use crate::error::{Error, Result};
use crate::transition::LegalitySet;
use crate::types::{Action, ParserState, Polarity, Sentence, Span};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Where token vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenSource {
    /// Trainable lookup table indexed through the vocabulary.
    Lookup,
    /// Fixed vectors keyed by (sentence id, token index); gaps fall back to
    /// the unknown row of the lookup table.
    External(ExternalVectors),
}

/// One token's input: a trainable row or a fixed vector.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenInput {
    Row(usize),
    Fixed(Array1<f64>),
}

/// Parameters plus everything needed to turn a sentence into vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dims: Dims,
    pub params: ScorerParams,
    pub vocab: Vocab,
    pub source: TokenSource,
}

impl Model {
    pub fn new(dims: Dims, vocab: Vocab, seed: u64) -> Result<Model> {
        dims.validate()?;
        let params = ScorerParams::init(&dims, vocab.len(), seed);
        Ok(Model {
            dims,
            params,
            vocab,
            source: TokenSource::Lookup,
        })
    }

    pub fn with_external(mut self, vectors: ExternalVectors) -> Result<Model> {
        if vectors.dim() != self.dims.token {
            return Err(Error::DimMismatch {
                expected: self.dims.token,
                found: vectors.dim(),
            });
        }
        self.source = TokenSource::External(vectors);
        Ok(self)
    }

    pub fn token_inputs(&self, sentence: &Sentence) -> Vec<TokenInput> {
        sentence
            .tokens()
            .iter()
            .map(|t| match &self.source {
                TokenSource::Lookup => TokenInput::Row(self.vocab.id(&t.surface)),
                TokenSource::External(ext) => match ext.get(sentence.id(), t.index) {
                    Some(v) => TokenInput::Fixed(Array1::from(v.to_vec())),
                    None => TokenInput::Row(0),
                },
            })
            .collect()
    }

    /// `n x d_tok` matrix of token vectors.
    pub fn embed_tokens(&self, sentence: &Sentence) -> Array2<f64> {
        embed_inputs(&self.token_inputs(sentence), &self.params)
    }
}

pub fn embed_inputs(inputs: &[TokenInput], params: &ScorerParams) -> Array2<f64> {
    let d = params.token_embeddings.ncols();
    let mut out = Array2::zeros((inputs.len(), d));
    for (i, input) in inputs.iter().enumerate() {
        match input {
            TokenInput::Row(r) => out.row_mut(i).assign(&params.token_embeddings.row(*r)),
            TokenInput::Fixed(v) => out.row_mut(i).assign(v),
        }
    }
    out
}

/// Mean of the member-token vectors.
pub fn constituent_vector(vectors: &Array2<f64>, span: Span) -> Array1<f64> {
    vectors
        .slice(s![span.start..=span.end, ..])
        .mean_axis(ndarray::Axis(0))
        .expect("spans are non-empty")
}

/// Index into the distance table. With fewer than two stack entries the
/// middle (d = 0) bucket is used.
pub fn distance_bucket(state: &ParserState, max_distance: usize) -> usize {
    let k = max_distance as i64;
    let d = match state.top_two() {
        Some((second, top)) => (top.span.start as i64 - second.span.end as i64).clamp(-k, k),
        None => 0,
    };
    (d + k) as usize
}

fn max_distance(params: &ScorerParams) -> usize {
    (params.distance_embeddings.nrows() - 1) / 2
}

/// The state vector `r` with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub r: Array1<f64>,
    pub hidden: usize,
    pub bucket: usize,
}

impl StateFeatures {
    pub fn assemble(
        parts: [&Array1<f64>; 5],
        params: &ScorerParams,
        bucket: usize,
    ) -> StateFeatures {
        let hidden = parts[0].len();
        let dist = params.distance_embeddings.row(bucket);
        let mut r = Array1::zeros(5 * hidden + dist.len());
        for (i, p) in parts.iter().enumerate() {
            r.slice_mut(s![i * hidden..(i + 1) * hidden]).assign(*p);
        }
        r.slice_mut(s![5 * hidden..]).assign(&dist);
        StateFeatures { r, hidden, bucket }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    fn part(&self, i: usize, width: usize) -> ArrayView1<'_, f64> {
        self.r.slice(s![i * self.hidden..i * self.hidden + width])
    }

    /// Forward and backward stack summaries.
    pub fn stack(&self) -> ArrayView1<'_, f64> {
        self.part(0, 2 * self.hidden)
    }

    pub fn buffer(&self) -> ArrayView1<'_, f64> {
        self.part(2, 2 * self.hidden)
    }

    pub fn history(&self) -> ArrayView1<'_, f64> {
        self.part(4, self.hidden)
    }

    pub fn distance(&self) -> ArrayView1<'_, f64> {
        self.r.slice(s![5 * self.hidden..])
    }
}

/// Builds the state vector from scratch.
pub fn summarize(state: &ParserState, vectors: &Array2<f64>, params: &ScorerParams) -> StateFeatures {
    let stack: Vec<Array1<f64>> = state.stack.iter().map(|c| constituent_vector(vectors, c.span)).collect();
    let s_f = params.stack_forward.final_hidden(stack.iter().map(|v| v.view()));
    let s_b = params.stack_backward.final_hidden(stack.iter().rev().map(|v| v.view()));
    let b_f = params.buffer_forward.final_hidden(state.buffer.iter().map(|&i| vectors.row(i)));
    let b_b = params.buffer_backward.final_hidden(state.buffer.iter().rev().map(|&i| vectors.row(i)));
    let alpha = params
        .history
        .final_hidden(state.history.iter().map(|a| params.action_embeddings.row(a.id())));
    let bucket = distance_bucket(state, max_distance(params));
    StateFeatures::assemble([&s_f, &s_b, &b_f, &b_b, &alpha], params, bucket)
}

pub fn action_logits(features: &StateFeatures, params: &ScorerParams) -> [f64; Action::COUNT] {
    let z = params.action_weights.dot(&features.r) + &params.action_bias;
    let mut out = [0.0; Action::COUNT];
    out.copy_from_slice(z.as_slice().unwrap());
    out
}

/// Max-subtracted softmax over the legal entries; illegal entries get 0.
pub fn masked_softmax(logits: &[f64; Action::COUNT], legal: LegalitySet) -> [f64; Action::COUNT] {
    let max = legal
        .iter()
        .map(|a| logits[a.id()])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; Action::COUNT];
    let mut total = 0.0;
    for a in legal.iter() {
        out[a.id()] = (logits[a.id()] - max).exp();
        total += out[a.id()];
    }
    for p in &mut out {
        *p /= total;
    }
    out
}

pub fn action_distribution(
    features: &StateFeatures,
    legal: LegalitySet,
    params: &ScorerParams,
) -> [f64; Action::COUNT] {
    debug_assert!(!legal.is_empty());
    masked_softmax(&action_logits(features, params), legal)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Hidden activation of the sentiment head, `tanh(W1 r + b1)`.
pub fn sentiment_hidden(features: &StateFeatures, params: &ScorerParams) -> Array1<f64> {
    (params.sentiment_hidden_weights.dot(&features.r) + &params.sentiment_hidden_bias).mapv(f64::tanh)
}

pub fn sentiment_distribution(features: &StateFeatures, params: &ScorerParams) -> [f64; Polarity::COUNT] {
    let h = sentiment_hidden(features, params);
    let z = params.sentiment_weights.dot(&h) + &params.sentiment_bias;
    let p = softmax(z.as_slice().unwrap());
    let mut out = [0.0; Polarity::COUNT];
    out.copy_from_slice(&p);
    out
}

/// Incremental featurizer for one sentence during decoding.
///
/// Buffer summaries depend only on the suffix start, so they are memoized;
/// the history summary advances one action at a time.
pub struct SentenceEncoding<'a> {
    params: &'a ScorerParams,
    vectors: Array2<f64>,
    buffer_backward: Vec<Array1<f64>>,
    buffer_forward: Vec<Option<Array1<f64>>>,
    history: LstmState,
    history_len: usize,
}

impl<'a> SentenceEncoding<'a> {
    pub fn new(vectors: Array2<f64>, params: &'a ScorerParams) -> SentenceEncoding<'a> {
        let n = vectors.nrows();
        let hidden = params.history.hidden_size();
        // Suffix k read right to left is tokens n-1 .. k: one shared run.
        let tape = params.buffer_backward.run((0..n).rev().map(|i| vectors.row(i)));
        let buffer_backward = (0..=n).map(|k| tape.hidden_after(n - k, hidden)).collect();
        SentenceEncoding {
            params,
            vectors,
            buffer_backward,
            buffer_forward: vec![None; n + 1],
            history: LstmState::new(hidden),
            history_len: 0,
        }
    }

    pub fn params(&self) -> &'a ScorerParams {
        self.params
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// Features of `state`, whose history must extend every history seen
    /// before.
    pub fn features(&mut self, state: &ParserState) -> StateFeatures {
        let params = self.params;
        let n = self.vectors.nrows();
        let start = state.buffer.front().copied().unwrap_or(n);
        debug_assert_eq!(state.buffer.len(), n - start);
        if self.buffer_forward[start].is_none() {
            let h = params.buffer_forward.final_hidden((start..n).map(|i| self.vectors.row(i)));
            self.buffer_forward[start] = Some(h);
        }
        assert!(state.history.len() >= self.history_len, "history went backwards");
        for a in &state.history[self.history_len..] {
            self.history.advance(&params.history, params.action_embeddings.row(a.id()));
        }
        self.history_len = state.history.len();

        let stack: Vec<Array1<f64>> = state
            .stack
            .iter()
            .map(|c| constituent_vector(&self.vectors, c.span))
            .collect();
        let s_f = params.stack_forward.final_hidden(stack.iter().map(|v| v.view()));
        let s_b = params.stack_backward.final_hidden(stack.iter().rev().map(|v| v.view()));
        let bucket = distance_bucket(state, max_distance(params));
        StateFeatures::assemble(
            [
                &s_f,
                &s_b,
                self.buffer_forward[start].as_ref().unwrap(),
                &self.buffer_backward[start],
                &self.history.h,
            ],
            params,
            bucket,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::transition::{apply, legal_actions};
    use crate::types::make_sentence;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small_dims() -> Dims {
        Dims {
            token: 5,
            action: 4,
            distance: 3,
            hidden: 6,
            sentiment_hidden: 4,
            max_distance: 10,
        }
    }

    fn gourmet() -> Sentence {
        crate::data::parse_aste_line("Gourmet food is delicious####[([0,1],[3],'POS')]").unwrap()
    }

    fn model(sentence: &Sentence) -> Model {
        Model::new(small_dims(), Vocab::from_sentences([sentence]), 4).unwrap()
    }

    #[test]
    fn embeds_one_vector_per_token() {
        let s = gourmet();
        let m = model(&s);
        let v = m.embed_tokens(&s);
        assert_eq!(v.dim(), (4, 5));
    }

    #[test]
    fn unknown_tokens_share_a_row() {
        let s = gourmet();
        let m = Model::new(small_dims(), Vocab::default(), 1).unwrap();
        let v = m.embed_tokens(&s);
        for i in 1..4 {
            assert_eq!(v.row(i), v.row(0));
        }
    }

    #[test]
    fn external_vectors() {
        let s = gourmet();
        let mut ext = ExternalVectors::new(5);
        for i in 0..3 {
            ext.insert(s.id(), i, vec![i as f64; 5]).unwrap();
        }
        let lookup = model(&s);
        let m = lookup.clone().with_external(ext).unwrap();
        let v = m.embed_tokens(&s);
        assert_eq!(v.row(2).to_vec(), vec![2.0; 5]);
        assert_eq!(v.row(3), m.params.token_embeddings.row(0));
        assert_eq!(v.dim(), lookup.embed_tokens(&s).dim());
        assert_ne!(v, lookup.embed_tokens(&s));

        let wide = ExternalVectors::new(768);
        assert!(matches!(
            lookup.with_external(wide),
            Err(Error::DimMismatch { expected: 5, found: 768 })
        ));
    }

    #[test]
    fn initial_state_summaries() {
        let s = gourmet();
        let m = model(&s);
        let f = summarize(&ParserState::initial(4), &m.embed_tokens(&s), &m.params);
        assert_eq!(f.len(), small_dims().feature_size());
        assert!(f.history().iter().all(|&x| x == 0.0));
        assert!(f.stack().iter().all(|&x| x == 0.0));
        assert!(f.buffer().iter().any(|&x| x != 0.0));
        assert_eq!(f.bucket, 10);
    }

    #[test]
    fn gourmet_row7_distance() {
        
        let mut state = ParserState::initial(4);
        for a in [Action::Shift, Action::Shift, Action::Merge, Action::Shift, Action::RightRemove, Action::Shift] {
            state = apply(&state, a).unwrap();
        }
        // start(delicious) - end(Gourmet food) = 3 - 1
        assert_eq!(distance_bucket(&state, 10), 10 + 2);
        assert_eq!(distance_bucket(&state, 1), 2);
    }

    #[test]
    fn equal_buffer_tokens_permute() {
        let s = make_sentence("p", &["x", "y", "x", "z"], vec![]).unwrap();
        let m = model(&s);
        let v = m.embed_tokens(&s);
        let mut state = ParserState::initial(4);
        let before = summarize(&state, &v, &m.params);
        state.buffer.swap(0, 2);
        assert_eq!(summarize(&state, &v, &m.params).buffer(), before.buffer());
    }

    #[test]
    fn softmax_examples() {
        let legal = LegalitySet::of(&[Action::Shift, Action::Stop, Action::Merge]);
        let p = masked_softmax(&[0.3; 7], legal);
        for a in legal.iter() {
            assert_abs_diff_eq!(p[a.id()], 1.0 / 3.0, epsilon = 1e-15);
        }
        let mut logits = [5.0; 7];
        logits[0] = 2f64.ln();
        logits[1] = 0.0;
        let p = masked_softmax(&logits, LegalitySet::of(&[Action::Shift, Action::Stop]));
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
        assert!(p[2..].iter().all(|&x| x == 0.0));
        let p = masked_softmax(&[9.0; 7], LegalitySet::of(&[Action::Shift]));
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn zero_sentiment_head_is_uniform() {
        let s = gourmet();
        let mut m = model(&s);
        m.params.sentiment_weights.fill(0.0);
        m.params.sentiment_bias.fill(0.0);
        let f = summarize(&ParserState::initial(4), &m.embed_tokens(&s), &m.params);
        assert_eq!(sentiment_distribution(&f, &m.params), [0.25; 4]);
    }

    #[test]
    fn incremental_encoding_matches_scratch() {
        let s = crate::synthetic::generate_long_sentence(3, "long", 40);
        let m = Model::new(small_dims(), Vocab::from_sentences([&s]), 2).unwrap();
        let vectors = m.embed_tokens(&s);
        let mut enc = SentenceEncoding::new(vectors.clone(), &m.params);
        for step in oracle::derive(&s).states {
            let state = step.before;
            let a = enc.features(&state);
            let b = summarize(&state, &vectors, &m.params);
            assert_eq!(a.bucket, b.bucket);
            for (x, y) in a.r.iter().zip(b.r.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn distributions_are_normalized(seed in 0u64..500, mask in 1u8..128) {
            let s = gourmet();
            let m = Model::new(small_dims(), Vocab::from_sentences([&s]), seed).unwrap();
            let f = summarize(&ParserState::initial(4), &m.embed_tokens(&s), &m.params);
            let legal = Action::ALL.iter().filter(|a| mask & (1 << a.id()) != 0)
                .fold(LegalitySet::empty(), |l, &a| l.with(a));
            let p = action_distribution(&f, legal, &m.params);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for a in Action::ALL {
                if legal.contains(a) {
                    prop_assert!(p[a.id()] > 0.0 && p[a.id()] <= 1.0);
                } else {
                    prop_assert_eq!(p[a.id()], 0.0);
                }
            }
            let q = sentiment_distribution(&f, &m.params);
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let _ = legal_actions(&ParserState::initial(4));
        }
    }
}
