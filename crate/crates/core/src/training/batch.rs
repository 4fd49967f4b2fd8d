//! Teacher-forced forward and backward passes over a batch of sentences.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2};

use crate::error::Result;
use crate::oracle;
use crate::scorer::{
    action_logits, constituent_vector, distance_bucket, embed_inputs, masked_softmax, sentiment_hidden, softmax,
    Model, ScorerParams, StateFeatures, Tape, TokenInput,
};
use crate::transition::{legal_actions, LegalitySet};
use crate::types::{Action, ParserState, Polarity, Sentence};

use super::loss::{argmax_legal, contrastive_with_grad, cosine_table, ContrastiveVariant, LossWeights};

/// One sentence with its oracle trace, ready for teacher forcing.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub inputs: Vec<TokenInput>,
    pub states: Vec<ParserState>,
    pub legal: Vec<LegalitySet>,
    pub actions: Vec<Action>,
    pub sentiments: Vec<Polarity>,
}

impl Example {
    pub fn new(model: &Model, sentence: &Sentence) -> Example {
        let derived = oracle::derive(sentence);
        let sentiments = derived.sentiments();
        let states: Vec<ParserState> = derived.states.into_iter().map(|s| s.before).collect();
        Example {
            id: sentence.id().to_string(),
            inputs: model.token_inputs(sentence),
            legal: states.iter().map(legal_actions).collect(),
            states,
            actions: derived.actions,
            sentiments,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Options that shape the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Objective {
    pub weights: LossWeights,
    pub variant: ContrastiveVariant,
}

/// Loss terms and counts for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub total: f64,
    pub base: f64,
    pub contrastive: f64,
    pub steps: usize,
    pub correct: usize,
    pub grad: Option<ScorerParams>,
}

struct StepForward {
    stack: Vec<Array1<f64>>,
    stack_forward: Tape,
    stack_backward: Tape,
    features: StateFeatures,
    logits: [f64; Action::COUNT],
    probs: [f64; Action::COUNT],
    sentiment_hidden: Array1<f64>,
    sentiment_probs: Vec<f64>,
}

struct SentenceForward {
    vectors: Array2<f64>,
    buffer_backward: Tape,
    buffer_forward: BTreeMap<usize, Tape>,
    history: Tape,
    steps: Vec<StepForward>,
}

fn forward_sentence(example: &Example, params: &ScorerParams) -> SentenceForward {
    let vectors = embed_inputs(&example.inputs, params);
    let n = vectors.nrows();
    let hidden = params.history.hidden_size();
    let max_distance = (params.distance_embeddings.nrows() - 1) / 2;
    let buffer_backward = params.buffer_backward.run((0..n).rev().map(|i| vectors.row(i)));
    let history_inputs = example.actions.len().saturating_sub(1);
    let history = params
        .history
        .run(example.actions[..history_inputs].iter().map(|a| params.action_embeddings.row(a.id())));

    let mut buffer_forward = BTreeMap::new();
    let mut steps = Vec::with_capacity(example.len());
    for (t, state) in example.states.iter().enumerate() {
        debug_assert_eq!(state.history, example.actions[..t]);
        let start = state.buffer.front().copied().unwrap_or(n);
        let b_f = buffer_forward
            .entry(start)
            .or_insert_with(|| params.buffer_forward.run((start..n).map(|i| vectors.row(i))))
            .hidden_after(n - start, hidden);
        let b_b = buffer_backward.hidden_after(n - start, hidden);
        let alpha = history.hidden_after(t, hidden);

        let stack: Vec<Array1<f64>> = state.stack.iter().map(|c| constituent_vector(&vectors, c.span)).collect();
        let stack_forward = params.stack_forward.run(stack.iter().map(|v| v.view()));
        let stack_backward = params.stack_backward.run(stack.iter().rev().map(|v| v.view()));
        let s_f = stack_forward.hidden_after(stack.len(), hidden);
        let s_b = stack_backward.hidden_after(stack.len(), hidden);

        let features = StateFeatures::assemble(
            [&s_f, &s_b, &b_f, &b_b, &alpha],
            params,
            distance_bucket(state, max_distance),
        );
        let logits = action_logits(&features, params);
        let probs = masked_softmax(&logits, example.legal[t]);
        let h = sentiment_hidden(&features, params);
        let z = params.sentiment_weights.dot(&h) + &params.sentiment_bias;
        steps.push(StepForward {
            stack,
            stack_forward,
            stack_backward,
            features,
            logits,
            probs,
            sentiment_hidden: h,
            sentiment_probs: softmax(z.as_slice().unwrap()),
        });
    }
    SentenceForward {
        vectors,
        buffer_backward,
        buffer_forward,
        history,
        steps,
    }
}

fn add_outer(target: &mut Array2<f64>, left: &Array1<f64>, right: &Array1<f64>) {
    for (r, &l) in left.iter().enumerate() {
        if l != 0.0 {
            target.row_mut(r).scaled_add(l, right);
        }
    }
}

/// Reverse pass for one sentence, given per-step gradients on the action
/// logits and on the sentiment logits.
fn backward_sentence(
    example: &Example,
    fwd: &SentenceForward,
    dlogits: &[[f64; Action::COUNT]],
    dsentiment: &[Array1<f64>],
    params: &ScorerParams,
    grad: &mut ScorerParams,
) {
    let n = fwd.vectors.nrows();
    let hidden = params.history.hidden_size();
    let mut dvectors: Array2<f64> = Array2::zeros(fwd.vectors.dim());
    let mut d_buffer_forward: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    let mut d_buffer_backward: Vec<Option<Array1<f64>>> = vec![None; fwd.buffer_backward.len()];
    let mut d_history: Vec<Option<Array1<f64>>> = vec![None; fwd.history.len()];

    let accumulate = |slot: &mut Option<Array1<f64>>, g: Array1<f64>| match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    };

    for (t, step) in fwd.steps.iter().enumerate() {
        let r = &step.features.r;
        let dz = Array1::from(dlogits[t].to_vec());
        add_outer(&mut grad.action_weights, &dz, r);
        grad.action_bias += &dz;
        let mut dr = params.action_weights.t().dot(&dz);

        let dz2 = &dsentiment[t];
        add_outer(&mut grad.sentiment_weights, dz2, &step.sentiment_hidden);
        grad.sentiment_bias += dz2;
        let dh = params.sentiment_weights.t().dot(dz2);
        let dpre = &dh * &step.sentiment_hidden.mapv(|h| 1.0 - h * h);
        add_outer(&mut grad.sentiment_hidden_weights, &dpre, r);
        grad.sentiment_hidden_bias += &dpre;
        dr += &params.sentiment_hidden_weights.t().dot(&dpre);

        let part = |i: usize| dr.slice(s![i * hidden..(i + 1) * hidden]).to_owned();
        let state = &example.states[t];
        let m = step.stack.len();
        if m > 0 {
            let mut dh = vec![None; m];
            dh[m - 1] = Some(part(0));
            let dx = params.stack_forward.backward(&step.stack_forward, &dh, &mut grad.stack_forward);
            let mut dh = vec![None; m];
            dh[m - 1] = Some(part(1));
            let dx_rev = params.stack_backward.backward(&step.stack_backward, &dh, &mut grad.stack_backward);
            for (i, c) in state.stack.iter().enumerate() {
                let g = (&dx[i] + &dx_rev[m - 1 - i]) / c.span.len() as f64;
                for tok in c.span.indices() {
                    dvectors.row_mut(tok).scaled_add(1.0, &g);
                }
            }
        }
        let start = state.buffer.front().copied().unwrap_or(n);
        if start < n {
            let g = part(2);
            d_buffer_forward
                .entry(start)
                .and_modify(|acc| *acc += &g)
                .or_insert(g);
            accumulate(&mut d_buffer_backward[n - start - 1], part(3));
        }
        if t > 0 {
            accumulate(&mut d_history[t - 1], part(4));
        }
        grad.distance_embeddings
            .row_mut(step.features.bucket)
            .scaled_add(1.0, &dr.slice(s![5 * hidden..]));
    }

    for (start, g) in d_buffer_forward {
        let tape = &fwd.buffer_forward[&start];
        let mut dh = vec![None; tape.len()];
        dh[tape.len() - 1] = Some(g);
        let dx = params.buffer_forward.backward(tape, &dh, &mut grad.buffer_forward);
        for (k, d) in dx.iter().enumerate() {
            dvectors.row_mut(start + k).scaled_add(1.0, d);
        }
    }
    if !fwd.buffer_backward.is_empty() {
        let dx = params
            .buffer_backward
            .backward(&fwd.buffer_backward, &d_buffer_backward, &mut grad.buffer_backward);
        for (k, d) in dx.iter().enumerate() {
            dvectors.row_mut(n - 1 - k).scaled_add(1.0, d);
        }
    }
    if !fwd.history.is_empty() {
        let dx = params.history.backward(&fwd.history, &d_history, &mut grad.history);
        for (k, d) in dx.iter().enumerate() {
            grad.action_embeddings
                .row_mut(example.actions[k].id())
                .scaled_add(1.0, d);
        }
    }
    for (i, input) in example.inputs.iter().enumerate() {
        if let TokenInput::Row(row) = input {
            grad.token_embeddings.row_mut(*row).scaled_add(1.0, &dvectors.row(i));
        }
    }
}

fn nll_grad(probs: &[f64], gold: usize, scale: f64) -> Option<Vec<f64>> {
    if probs[gold] < crate::scorer::LOG_FLOOR {
        return None;
    }
    Some(
        probs
            .iter()
            .enumerate()
            .map(|(k, &p)| scale * (p - if k == gold { 1.0 } else { 0.0 }))
            .collect(),
    )
}

/// Runs the batch; with `want_grad` also returns the exact gradient of the
/// total loss.
pub fn run_batch(
    examples: &[&Example],
    params: &ScorerParams,
    objective: &Objective,
    want_grad: bool,
) -> Result<BatchOutput> {
    let forwards: Vec<SentenceForward> = examples.iter().map(|e| forward_sentence(e, params)).collect();
    let steps: usize = examples.iter().map(|e| e.len()).sum();
    let inv_n = if steps == 0 { 0.0 } else { 1.0 / steps as f64 };

    let mut action_nll = 0.0;
    let mut sentiment_nll = 0.0;
    let mut correct = 0;
    let mut predicted = Vec::with_capacity(steps);
    let mut gold = Vec::with_capacity(steps);
    for (e, f) in examples.iter().zip(&forwards) {
        for (t, step) in f.steps.iter().enumerate() {
            action_nll += super::loss::clamped_nll(step.probs[e.actions[t].id()]);
            sentiment_nll += super::loss::clamped_nll(step.sentiment_probs[e.sentiments[t].label()]);
            let p = argmax_legal(&step.logits, e.legal[t]);
            correct += usize::from(p == e.actions[t]);
            predicted.push(p);
            gold.push(e.actions[t]);
        }
    }
    let base = (action_nll + sentiment_nll) * inv_n;

    let weights = objective.weights;
    let mut contrastive = 0.0;
    let mut contrastive_grad = None;
    if weights.contrastive != 0.0 && steps > 0 {
        let used: Vec<Action> = predicted.iter().chain(&gold).copied().collect();
        let table = &params.contrastive_embeddings;
        let cos = cosine_table(table, &used)?;
        let sim = Array2::from_shape_fn((steps, steps), |(i, j)| cos[[predicted[i].id(), gold[j].id()]]);
        let (loss, dsim) = contrastive_with_grad(&sim, objective.variant);
        contrastive = loss;
        if want_grad {
            // Collapse dS onto the 7 x 7 (pred row, gold row) pairs.
            let mut pair_grad = Array2::<f64>::zeros((Action::COUNT, Action::COUNT));
            for i in 0..steps {
                for j in 0..steps {
                    pair_grad[[predicted[i].id(), gold[j].id()]] += dsim[[i, j]];
                }
            }
            let mut g = Array2::<f64>::zeros(table.dim());
            for a in 0..Action::COUNT {
                for b in 0..Action::COUNT {
                    let w = weights.contrastive * pair_grad[[a, b]];
                    if w == 0.0 {
                        continue;
                    }
                    let (u, v) = (table.row(a), table.row(b));
                    let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
                    let c = cos[[a, b]];
                    let du = &v / (nu * nv) - &u * (c / (nu * nu));
                    let dv = &u / (nu * nv) - &v * (c / (nv * nv));
                    g.row_mut(a).scaled_add(w, &du);
                    g.row_mut(b).scaled_add(w, &dv);
                }
            }
            contrastive_grad = Some(g);
        }
    }

    let grad = if want_grad {
        let mut grad = params.zeros_like();
        if weights.base != 0.0 {
            let scale = weights.base * inv_n;
            for ((e, f), _) in examples.iter().zip(&forwards).zip(0..) {
                let dlogits: Vec<[f64; Action::COUNT]> = f
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(t, step)| {
                        let mut out = [0.0; Action::COUNT];
                        if let Some(g) = nll_grad(&step.probs, e.actions[t].id(), scale) {
                            for a in e.legal[t].iter() {
                                out[a.id()] = g[a.id()];
                            }
                        }
                        out
                    })
                    .collect();
                let dsentiment: Vec<Array1<f64>> = f
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(t, step)| {
                        nll_grad(&step.sentiment_probs, e.sentiments[t].label(), scale)
                            .map(Array1::from)
                            .unwrap_or_else(|| Array1::zeros(step.sentiment_probs.len()))
                    })
                    .collect();
                backward_sentence(e, f, &dlogits, &dsentiment, params, &mut grad);
            }
        }
        if let Some(g) = contrastive_grad {
            grad.contrastive_embeddings += &g;
        }
        Some(grad)
    } else {
        None
    };

    Ok(BatchOutput {
        total: weights.total(base, contrastive),
        base,
        contrastive,
        steps,
        correct,
        grad,
    })
}

/// Loss only.
pub fn batch_loss(examples: &[&Example], params: &ScorerParams, objective: &Objective) -> Result<f64> {
    Ok(run_batch(examples, params, objective, false)?.total)
}
