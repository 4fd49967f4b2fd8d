use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Action, Polarity};

use super::lstm::Lstm;

/// Layer sizes. Everything is configurable; defaults are desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub token: usize,
    pub action: usize,
    pub distance: usize,
    pub hidden: usize,
    pub sentiment_hidden: usize,
    /// Distances are clamped to `[-max_distance, max_distance]`.
    pub max_distance: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            token: 64,
            action: 32,
            distance: 16,
            hidden: 64,
            sentiment_hidden: 64,
            max_distance: 10,
        }
    }
}

impl Dims {
    /// Width of the state representation: stack and buffer summaries (both
    /// directions), action history, distance embedding.
    pub fn feature_size(&self) -> usize {
        5 * self.hidden + self.distance
    }

    pub fn distance_buckets(&self) -> usize {
        2 * self.max_distance + 1
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("token", self.token),
            ("action", self.action),
            ("distance", self.distance),
            ("hidden", self.hidden),
            ("sentiment_hidden", self.sentiment_hidden),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::Config(format!("{name} dimension must be positive")));
            }
        }
        Ok(())
    }
}

/// Every learnable tensor. The same struct doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    /// Row 0 is the shared unknown-token row.
    pub token_embeddings: Array2<f64>,
    /// Inputs to the action-history recurrence.
    pub action_embeddings: Array2<f64>,
    /// Action table read only by the contrastive objective.
    pub contrastive_embeddings: Array2<f64>,
    pub distance_embeddings: Array2<f64>,
    pub history: Lstm,
    pub stack_forward: Lstm,
    pub stack_backward: Lstm,
    pub buffer_forward: Lstm,
    pub buffer_backward: Lstm,
    pub action_weights: Array2<f64>,
    pub action_bias: Array1<f64>,
    pub sentiment_hidden_weights: Array2<f64>,
    pub sentiment_hidden_bias: Array1<f64>,
    pub sentiment_weights: Array2<f64>,
    pub sentiment_bias: Array1<f64>,
}

/// Name and shape of one tensor; 1-D tensors have one row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorShape {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
}

macro_rules! tensor_list {
    ($self:expr, $as_slice:ident) => {
        vec![
            ("token_embeddings", $self.token_embeddings.$as_slice().unwrap()),
            ("action_embeddings", $self.action_embeddings.$as_slice().unwrap()),
            ("contrastive_embeddings", $self.contrastive_embeddings.$as_slice().unwrap()),
            ("distance_embeddings", $self.distance_embeddings.$as_slice().unwrap()),
            ("history.weights", $self.history.weights.$as_slice().unwrap()),
            ("history.bias", $self.history.bias.$as_slice().unwrap()),
            ("stack_forward.weights", $self.stack_forward.weights.$as_slice().unwrap()),
            ("stack_forward.bias", $self.stack_forward.bias.$as_slice().unwrap()),
            ("stack_backward.weights", $self.stack_backward.weights.$as_slice().unwrap()),
            ("stack_backward.bias", $self.stack_backward.bias.$as_slice().unwrap()),
            ("buffer_forward.weights", $self.buffer_forward.weights.$as_slice().unwrap()),
            ("buffer_forward.bias", $self.buffer_forward.bias.$as_slice().unwrap()),
            ("buffer_backward.weights", $self.buffer_backward.weights.$as_slice().unwrap()),
            ("buffer_backward.bias", $self.buffer_backward.bias.$as_slice().unwrap()),
            ("action_weights", $self.action_weights.$as_slice().unwrap()),
            ("action_bias", $self.action_bias.$as_slice().unwrap()),
            ("sentiment_hidden_weights", $self.sentiment_hidden_weights.$as_slice().unwrap()),
            ("sentiment_hidden_bias", $self.sentiment_hidden_bias.$as_slice().unwrap()),
            ("sentiment_weights", $self.sentiment_weights.$as_slice().unwrap()),
            ("sentiment_bias", $self.sentiment_bias.$as_slice().unwrap()),
        ]
    };
}

impl ScorerParams {
    pub fn zeros(dims: &Dims, vocab_size: usize) -> ScorerParams {
        let r = dims.feature_size();
        ScorerParams {
            token_embeddings: Array2::zeros((vocab_size.max(1), dims.token)),
            action_embeddings: Array2::zeros((Action::COUNT, dims.action)),
            contrastive_embeddings: Array2::zeros((Action::COUNT, dims.action)),
            distance_embeddings: Array2::zeros((dims.distance_buckets(), dims.distance)),
            history: Lstm::zeros(dims.action, dims.hidden),
            stack_forward: Lstm::zeros(dims.token, dims.hidden),
            stack_backward: Lstm::zeros(dims.token, dims.hidden),
            buffer_forward: Lstm::zeros(dims.token, dims.hidden),
            buffer_backward: Lstm::zeros(dims.token, dims.hidden),
            action_weights: Array2::zeros((Action::COUNT, r)),
            action_bias: Array1::zeros(Action::COUNT),
            sentiment_hidden_weights: Array2::zeros((dims.sentiment_hidden, r)),
            sentiment_hidden_bias: Array1::zeros(dims.sentiment_hidden),
            sentiment_weights: Array2::zeros((Polarity::COUNT, dims.sentiment_hidden)),
            sentiment_bias: Array1::zeros(Polarity::COUNT),
        }
    }

    /// Uniform(-0.1, 0.1) initialization from `seed`.
    pub fn init(dims: &Dims, vocab_size: usize, seed: u64) -> ScorerParams {
        let mut params = ScorerParams::zeros(dims, vocab_size);
        params.randomize(seed, 0.1);
        params
    }

    /// Refills every tensor with Uniform(-scale, scale).
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.for_each_mut(|_, values| {
            for v in values {
                *v = rng.gen_range(-scale..scale);
            }
        });
    }

    pub fn zeros_like(&self) -> ScorerParams {
        let mut z = self.clone();
        z.for_each_mut(|_, values| values.fill(0.0));
        z
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        tensor_list!(self, as_slice)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        tensor_list!(self, as_slice_mut)
    }

    pub fn for_each(&self, mut f: impl FnMut(&'static str, &[f64])) {
        for (name, values) in self.tensors() {
            f(name, values);
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut [f64])) {
        for (name, values) in self.tensors_mut() {
            f(name, values);
        }
    }

    pub fn shapes(&self) -> Vec<TensorShape> {
        let two = |name, a: &Array2<f64>| TensorShape {
            name,
            rows: a.nrows(),
            cols: a.ncols(),
        };
        let one = |name, a: &Array1<f64>| TensorShape { name, rows: 1, cols: a.len() };
        vec![
            two("token_embeddings", &self.token_embeddings),
            two("action_embeddings", &self.action_embeddings),
            two("contrastive_embeddings", &self.contrastive_embeddings),
            two("distance_embeddings", &self.distance_embeddings),
            two("history.weights", &self.history.weights),
            one("history.bias", &self.history.bias),
            two("stack_forward.weights", &self.stack_forward.weights),
            one("stack_forward.bias", &self.stack_forward.bias),
            two("stack_backward.weights", &self.stack_backward.weights),
            one("stack_backward.bias", &self.stack_backward.bias),
            two("buffer_forward.weights", &self.buffer_forward.weights),
            one("buffer_forward.bias", &self.buffer_forward.bias),
            two("buffer_backward.weights", &self.buffer_backward.weights),
            one("buffer_backward.bias", &self.buffer_backward.bias),
            two("action_weights", &self.action_weights),
            one("action_bias", &self.action_bias),
            two("sentiment_hidden_weights", &self.sentiment_hidden_weights),
            one("sentiment_hidden_bias", &self.sentiment_hidden_bias),
            two("sentiment_weights", &self.sentiment_weights),
            one("sentiment_bias", &self.sentiment_bias),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, v| n += v.len());
        n
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ScorerParams, scale: f64) {
        for ((_, values), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(values.len(), src.len());
            for (v, s) in values.iter_mut().zip(src) {
                *v += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    /// Largest absolute entry over all tensors.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        self.for_each(|_, v| m = v.iter().fold(m, |acc, x| acc.max(x.abs())));
        m
    }
}
