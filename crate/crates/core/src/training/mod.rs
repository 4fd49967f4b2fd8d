//! Objectives, exact gradients and the teacher-forced training loop.

mod adam;
mod batch;
pub mod checkpoint;
mod gradcheck;
mod loss;

use std::ops::ControlFlow;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use batch::{batch_loss, run_batch, BatchOutput, Example, Objective};
pub use gradcheck::{finite_diff_check, Coordinate, GradCheckReport, RELATIVE_FLOOR};
pub use loss::{argmax_legal, base_loss, clamped_nll, contrastive_loss, ContrastiveVariant, LossWeights};

use crate::data::Corpus;
use crate::decode::PredictionSet;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Task};
use crate::scorer::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sentences per optimizer step; every step of each sentence counts.
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub variant: ContrastiveVariant,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 4,
            seed: 13,
            weights: LossWeights::default(),
            variant: ContrastiveVariant::Column,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("optimizer parameters out of range".into()));
        }
        LossWeights::new(self.weights.base, self.weights.contrastive)?;
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            weights: self.weights,
            variant: self.variant,
        }
    }
}

/// Numbers recorded after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Step-weighted mean of the batch losses seen during the epoch.
    pub loss: f64,
    /// Teacher-forced action accuracy (percent) during the epoch.
    pub action_accuracy: f64,
    pub dev_aope_f1: Option<f64>,
    pub dev_aste_f1: Option<f64>,
}

/// Teacher-forced accuracy (percent) of the current parameters.
pub fn teacher_forced_accuracy(model: &Model, examples: &[Example]) -> Result<f64> {
    let refs: Vec<&Example> = examples.iter().collect();
    let mut steps = 0;
    let mut correct = 0;
    for chunk in refs.chunks(16) {
        let out = run_batch(chunk, &model.params, &Objective::default(), false)?;
        steps += out.steps;
        correct += out.correct;
    }
    Ok(if steps == 0 { 0.0 } else { 100.0 * correct as f64 / steps as f64 })
}

/// Decodes `dev` and scores both tasks; returns (AOPE F1, ASTE F1).
pub fn dev_scores(model: &Model, dev: &Corpus) -> Result<(f64, f64)> {
    let predictions = PredictionSet::decode_all(model, &dev.sentences)?.sentence_predictions();
    Ok((
        evaluate(&predictions, &dev.sentences, Task::Aope)?.f1,
        evaluate(&predictions, &dev.sentences, Task::Aste)?.f1,
    ))
}

/// Trains `model` on oracle traces of `train`.
pub fn train(mut model: Model, train: &Corpus, dev: Option<&Corpus>, config: &TrainConfig) -> Result<(Model, Vec<EpochMetrics>)> {
    let metrics = train_with(&mut model, train, dev, config, |_| ControlFlow::Continue(()))?;
    Ok((model, metrics))
}

/// As [`train`], calling `on_epoch` after each epoch; `Break` ends training
/// early.
pub fn train_with(
    model: &mut Model,
    train: &Corpus,
    dev: Option<&Corpus>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> ControlFlow<()>,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if train.sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 1 && config.weights.contrastive > 0.0 {
        warn!("batch size 1 with a contrastive weight: single-sentence batches still pool all their steps, but short sentences give a weak contrastive signal");
    }
    let examples: Vec<Example> = train.sentences.iter().map(|s| Example::new(model, s)).collect();
    let objective = config.objective();
    let mut adam = Adam::new(&model.params, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut steps, mut correct) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let out = run_batch(&batch, &model.params, &objective, true)?;
            loss_sum += out.total * out.steps as f64;
            steps += out.steps;
            correct += out.correct;
            adam.step(&mut model.params, out.grad.as_ref().expect("gradient requested"));
        }
        let (dev_aope_f1, dev_aste_f1) = match dev {
            Some(d) if !d.sentences.is_empty() => {
                let (a, b) = dev_scores(model, d)?;
                (Some(a), Some(b))
            }
            _ => (None, None),
        };
        let metrics = EpochMetrics {
            epoch,
            loss: if steps == 0 { 0.0 } else { loss_sum / steps as f64 },
            action_accuracy: if steps == 0 { 0.0 } else { 100.0 * correct as f64 / steps as f64 },
            dev_aope_f1,
            dev_aste_f1,
        };
        info!(
            "epoch {} loss {:.5} acc {:.2} dev aope {:?} aste {:?}",
            metrics.epoch, metrics.loss, metrics.action_accuracy, metrics.dev_aope_f1, metrics.dev_aste_f1
        );
        let flow = on_epoch(&metrics);
        history.push(metrics);
        if flow.is_break() {
            break;
        }
    }
    Ok(history)
}
