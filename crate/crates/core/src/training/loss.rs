//! Loss functions on already-computed distributions.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::scorer::LOG_FLOOR;
use crate::transition::LegalitySet;
use crate::types::{Action, Polarity};

/// Mixing weights of the base and contrastive objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub base: f64,
    pub contrastive: f64,
}

impl LossWeights {
    pub fn new(base: f64, contrastive: f64) -> Result<LossWeights> {
        let valid = |w: f64| w.is_finite() && w >= 0.0;
        if !valid(base) || !valid(contrastive) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got ({base}, {contrastive})")));
        }
        if base == 0.0 && contrastive == 0.0 {
            return Err(Error::Config("loss weights cannot both be zero".into()));
        }
        Ok(LossWeights { base, contrastive })
    }

    pub fn total(&self, base: f64, contrastive: f64) -> f64 {
        self.base * base + self.contrastive * contrastive
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            base: 1.0,
            contrastive: 0.0,
        }
    }
}

/// How the similarity matrix is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContrastiveVariant {
    /// Each gold column is a softmax over predictions.
    #[default]
    Column,
    /// Mean of the column- and row-normalized losses.
    Symmetric,
}

pub fn clamped_nll(p: f64) -> f64 {
    0.0 - p.max(LOG_FLOOR).ln()
}

/// Mean action NLL plus mean sentiment NLL.
pub fn base_loss(
    action_probs: &[[f64; Action::COUNT]],
    gold_actions: &[Action],
    sentiment_probs: &[[f64; Polarity::COUNT]],
    gold_sentiments: &[Polarity],
) -> f64 {
    assert_eq!(action_probs.len(), gold_actions.len());
    assert_eq!(sentiment_probs.len(), gold_sentiments.len());
    let mean = |total: f64, n: usize| if n == 0 { 0.0 } else { total / n as f64 };
    let actions: f64 = action_probs
        .iter()
        .zip(gold_actions)
        .map(|(p, a)| clamped_nll(p[a.id()]))
        .sum();
    let sentiments: f64 = sentiment_probs
        .iter()
        .zip(gold_sentiments)
        .map(|(p, s)| clamped_nll(p[s.label()]))
        .sum();
    mean(actions, action_probs.len()) + mean(sentiments, sentiment_probs.len())
}

/// Highest-scoring legal action; ties go to the lower id.
pub fn argmax_legal(logits: &[f64; Action::COUNT], legal: LegalitySet) -> Action {
    let mut best: Option<Action> = None;
    for a in legal.iter() {
        if best.is_none_or(|b| logits[a.id()] > logits[b.id()]) {
            best = Some(a);
        }
    }
    best.expect("legal set is non-empty")
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity between every pair of table rows.
pub(crate) fn cosine_table(table: &Array2<f64>, used: &[Action]) -> Result<Array2<f64>> {
    let rows = table.nrows();
    let norms: Vec<f64> = (0..rows).map(|r| norm(table.row(r))).collect();
    for a in used {
        if norms[a.id()] == 0.0 {
            return Err(Error::ZeroVectorEmbedding { action: a.id() });
        }
    }
    Ok(Array2::from_shape_fn((rows, rows), |(i, j)| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            table.row(i).dot(&table.row(j)) / (norms[i] * norms[j])
        }
    }))
}

/// Loss and `dL/dS` for the similarity matrix `S_ij = cos(pred_i, gold_j)`.
pub(crate) fn contrastive_with_grad(s: &Array2<f64>, variant: ContrastiveVariant) -> (f64, Array2<f64>) {
    let n = s.nrows();
    let mut grad = Array2::zeros((n, n));
    if n == 0 {
        return (0.0, grad);
    }
    let inv_n = 1.0 / n as f64;
    let column = |transpose: bool, grad: &mut Array2<f64>, weight: f64| -> f64 {
        let mut loss = 0.0;
        for j in 0..n {
            let at = |i: usize| if transpose { s[[j, i]] } else { s[[i, j]] };
            let max = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..n).map(|i| (at(i) - max).exp()).sum();
            let log_total = max + total.ln();
            loss += log_total - at(j);
            for i in 0..n {
                let p = (at(i) - log_total).exp();
                let g = weight * inv_n * (p - if i == j { 1.0 } else { 0.0 });
                if transpose {
                    grad[[j, i]] += g;
                } else {
                    grad[[i, j]] += g;
                }
            }
        }
        weight * loss * inv_n
    };
    let loss = match variant {
        ContrastiveVariant::Column => column(false, &mut grad, 1.0),
        ContrastiveVariant::Symmetric => column(false, &mut grad, 0.5) + column(true, &mut grad, 0.5),
    };
    (loss, grad)
}

/// Contrastive loss between predicted and gold action embeddings.
pub fn contrastive_loss(
    predicted: &[Action],
    gold: &[Action],
    table: &Array2<f64>,
    variant: ContrastiveVariant,
) -> Result<f64> {
    assert_eq!(predicted.len(), gold.len());
    let used: Vec<Action> = predicted.iter().chain(gold).copied().collect();
    let cos = cosine_table(table, &used)?;
    let s = Array2::from_shape_fn((gold.len(), gold.len()), |(i, j)| cos[[predicted[i].id(), gold[j].id()]]);
    Ok(contrastive_with_grad(&s, variant).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_hot<const K: usize>(k: usize) -> [f64; K] {
        let mut p = [0.0; K];
        p[k] = 1.0;
        p
    }

    fn orthogonal_table() -> Array2<f64> {
        Array2::from_shape_fn((7, 7), |(i, j)| if i == j { 1.0 + i as f64 } else { 0.0 })
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
        assert!(LossWeights::new(f64::NAN, 1.0).is_err());
        assert!(LossWeights::new(0.0, 1.0).is_ok());
        let w = LossWeights::new(1.0, 1.0).unwrap();
        assert_eq!(w.total(0.5, 0.3), 0.8);
    }

    #[test]
    fn base_loss_cases() {
        let a = [one_hot::<7>(2), one_hot::<7>(0)];
        let s = [one_hot::<4>(3), one_hot::<4>(1)];
        assert_eq!(
            base_loss(&a, &[Action::Merge, Action::Shift], &s, &[Polarity::None, Polarity::Neg]),
            0.0
        );

        let mut half = [0.0; 7];
        half[0] = 0.5;
        half[1] = 0.5;
        let l = base_loss(&[half], &[Action::Shift], &[one_hot::<4>(0)], &[Polarity::Pos]);
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-15);

        let mut quarter = [0.0; 7];
        quarter[0] = 0.25;
        quarter[1] = 0.75;
        let sent = [one_hot::<4>(3); 2];
        let l = base_loss(&[half, quarter], &[Action::Shift; 2], &sent, &[Polarity::None; 2]);
        assert_abs_diff_eq!(l, (2f64.ln() + 4f64.ln()) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let l = base_loss(&[one_hot::<7>(1)], &[Action::Shift], &[one_hot::<4>(3)], &[Polarity::None]);
        assert_abs_diff_eq!(l, -(1e-12f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn contrastive_single_is_zero() {
        let t = orthogonal_table();
        for (p, g) in [(Action::Shift, Action::Shift), (Action::Merge, Action::Stop)] {
            assert_eq!(contrastive_loss(&[p], &[g], &t, ContrastiveVariant::Column).unwrap(), 0.0);
        }
    }

    #[test]
    fn contrastive_orthogonal_pair() {
        let t = orthogonal_table();
        let gold = [Action::Shift, Action::Merge];
        let expected = (1.0 + (-1f64).exp()).ln();
        for variant in [ContrastiveVariant::Column, ContrastiveVariant::Symmetric] {
            let l = contrastive_loss(&gold, &gold, &t, variant).unwrap();
            assert_abs_diff_eq!(l, expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(expected, 0.313262, epsilon = 1e-6);
    }

    #[test]
    fn contrastive_zero_row() {
        let mut t = orthogonal_table();
        t.row_mut(2).fill(0.0);
        let r = contrastive_loss(&[Action::Merge, Action::Shift], &[Action::Shift; 2], &t, ContrastiveVariant::Column);
        assert!(matches!(r, Err(Error::ZeroVectorEmbedding { .. })));
    }

    #[test]
    fn contrastive_grad_matches_differences() {
        let s = Array2::from_shape_fn((3, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        for variant in [ContrastiveVariant::Column, ContrastiveVariant::Symmetric] {
            let (_, g) = contrastive_with_grad(&s, variant);
            for i in 0..3 {
                for j in 0..3 {
                    let h = 1e-6;
                    let mut plus = s.clone();
                    plus[[i, j]] += h;
                    let mut minus = s.clone();
                    minus[[i, j]] -= h;
                    let numeric = (contrastive_with_grad(&plus, variant).0 - contrastive_with_grad(&minus, variant).0) / (2.0 * h);
                    assert_abs_diff_eq!(numeric, g[[i, j]], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        let legal = LegalitySet::of(&[Action::Stop, Action::LeftRemove, Action::RightRemove]);
        let mut logits = [0.0; 7];
        logits[0] = 9.0;
        logits[3] = 1.0;
        logits[4] = 1.0;
        assert_eq!(argmax_legal(&logits, legal), Action::LeftRemove);
    }
}
