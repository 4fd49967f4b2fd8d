use crate::scorer::ScorerParams;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: ScorerParams,
    second: ScorerParams,
    steps: i32,
}

impl Adam {
    pub fn new(params: &ScorerParams, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Adam {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ScorerParams, grad: &ScorerParams) {
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::Dims;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let dims = Dims { token: 2, action: 2, distance: 2, hidden: 2, sentiment_hidden: 2, max_distance: 1 };
        let mut p = ScorerParams::init(&dims, 2, 0);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.action_bias[3] = 0.5;
        g.action_bias[4] = -2.0;
        let mut adam = Adam::new(&p, 0.01, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g);
        assert!((before.action_bias[3] - p.action_bias[3] - 0.01).abs() < 1e-6);
        assert!((p.action_bias[4] - before.action_bias[4] - 0.01).abs() < 1e-6);
        p.action_bias[3] = before.action_bias[3];
        p.action_bias[4] = before.action_bias[4];
        assert_eq!(p, before);
    }
}
