use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scorer::ScorerParams;

use super::batch::{batch_loss, run_batch, Example, Objective};

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Coordinate {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(RELATIVE_FLOOR);
        (self.analytic - self.numeric).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst: Option<Coordinate>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "checked={} max_rel_error={:.3e} tolerance={:.1e} {}",
            self.checked,
            self.max_relative_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        if let Some(w) = &self.worst {
            write!(f, " worst={}[{}] analytic={:.6e} numeric={:.6e}", w.tensor, w.index, w.analytic, w.numeric)?;
        }
        Ok(())
    }
}

fn nudge(params: &ScorerParams, tensor: usize, index: usize, delta: f64) -> ScorerParams {
    let mut p = params.clone();
    p.tensors_mut()[tensor].1[index] += delta;
    p
}

/// Central differences on a seeded 1% sample of coordinates plus every
/// entry of both action tables.
pub fn finite_diff_check(
    params: &ScorerParams,
    examples: &[&Example],
    objective: &Objective,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    assert!(h > 0.0, "step must be positive");
    let grad = run_batch(examples, params, objective, true)?.grad.expect("gradient requested");
    let grads: Vec<Vec<f64>> = grad.tensors().into_iter().map(|(_, g)| g.to_vec()).collect();
    let layout: Vec<(&'static str, usize)> = params.tensors().into_iter().map(|(n, v)| (n, v.len())).collect();

    let total: usize = layout.iter().map(|(_, n)| n).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<usize> = sample(&mut rng, total, total.div_ceil(100)).into_vec();
    let mut offset = 0;
    for (name, len) in &layout {
        if matches!(*name, "action_embeddings" | "contrastive_embeddings") {
            flat.extend(offset..offset + len);
        }
        offset += len;
    }
    flat.sort_unstable();
    flat.dedup();

    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
        tolerance,
    };
    for f in flat {
        let mut tensor = 0;
        let mut index = f;
        while index >= layout[tensor].1 {
            index -= layout[tensor].1;
            tensor += 1;
        }
        let plus = batch_loss(examples, &nudge(params, tensor, index, h), objective)?;
        let minus = batch_loss(examples, &nudge(params, tensor, index, -h), objective)?;
        let c = Coordinate {
            tensor: layout[tensor].0,
            index,
            analytic: grads[tensor][index],
            numeric: (plus - minus) / (2.0 * h),
        };
        report.checked += 1;
        let err = c.relative_error();
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some(c);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{Dims, Model, Vocab};
    use crate::synthetic::default_synthetic;
    use crate::training::loss::{ContrastiveVariant, LossWeights};

    fn setup(seed: u64) -> (Model, Vec<Example>) {
        let dims = Dims { token: 4, action: 3, distance: 2, hidden: 3, sentiment_hidden: 3, max_distance: 3 };
        let corpus = default_synthetic(seed, 2);
        let model = Model::new(dims, Vocab::from_sentences(&corpus.sentences), seed).unwrap();
        let examples = corpus.sentences.iter().map(|s| Example::new(&model, s)).collect();
        (model, examples)
    }

    #[test]
    fn analytic_matches_numeric() {
        for (w1, w2, variant) in [
            (1.0, 0.0, ContrastiveVariant::Column),
            (1.0, 1.0, ContrastiveVariant::Column),
            (0.5, 2.0, ContrastiveVariant::Symmetric),
        ] {
            let (model, examples) = setup(21);
            let refs: Vec<&Example> = examples.iter().collect();
            let objective = Objective { weights: LossWeights::new(w1, w2).unwrap(), variant };
            let report = finite_diff_check(&model.params, &refs, &objective, 1e-4, 1e-4, 5).unwrap();
            assert!(report.passed(), "{report}");
            assert!(report.checked > 2 * 7 * 3);
        }
    }

    #[test]
    fn zero_tolerance_fails_and_check_is_pure() {
        let (model, examples) = setup(4);
        let refs: Vec<&Example> = examples.iter().collect();
        let objective = Objective::default();
        let a = finite_diff_check(&model.params, &refs, &objective, 1e-4, 0.0, 1).unwrap();
        let b = finite_diff_check(&model.params, &refs, &objective, 1e-4, 0.0, 1).unwrap();
        assert!(!a.passed());
        assert_eq!(a, b);
    }
}
