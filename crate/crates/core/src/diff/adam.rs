//! Adam with bias correction and multi-step learning-rate decay.

/// Adam hyperparameters. Defaults follow the usual convention
/// (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Multiply the learning rate by `decay` at each milestone step (0-based:
/// the decayed rate applies from that step onward).
#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl LrSchedule {
    pub fn none() -> Self {
        LrSchedule { milestones: Vec::new(), decay: 1.0 }
    }

    /// Map epoch-style milestone fractions onto a step budget.
    pub fn from_fractions(fractions: &[f64], total_steps: usize, decay: f64) -> Self {
        let milestones = fractions
            .iter()
            .map(|f| ((*f) * total_steps as f64).round() as usize)
            .collect();
        LrSchedule { milestones, decay }
    }

    pub fn lr_at(&self, base_lr: f64, step: usize) -> f64 {
        let hits = self.milestones.iter().filter(|&&m| step >= m).count();
        base_lr * self.decay.powi(hits as i32)
    }
}

/// First/second moment buffers for one variable.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One Adam update. `step` is 1-based for bias correction.
    pub fn update(&mut self, values: &mut [f64], grad: &[f64], hyper: &AdamHyper, lr: f64, step: usize) {
        debug_assert_eq!(values.len(), grad.len());
        debug_assert_eq!(values.len(), self.m.len());
        let b1 = hyper.beta1;
        let b2 = hyper.beta2;
        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        for i in 0..values.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let hyper = AdamHyper::default();
        let mut state = AdamState::zeros(3);
        let mut values = vec![1.0, -2.0, 0.5];
        let before = values.clone();
        state.update(&mut values, &[0.0; 3], &hyper, hyper.lr, 1);
        assert_eq!(values, before);
    }

    #[test]
    fn first_step_matches_hand_arithmetic() {
        // var 0, grad 1, lr 1e-4: m_hat = 1, v_hat = 1,
        // update = -1e-4 / (1 + 1e-8).
        let hyper = AdamHyper::default();
        let mut state = AdamState::zeros(1);
        let mut values = vec![0.0];
        state.update(&mut values, &[1.0], &hyper, 1e-4, 1);
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((values[0] - expected).abs() < 1e-18, "{} vs {}", values[0], expected);
    }

    #[test]
    fn schedule_decays_by_exactly_ten_percent_steps() {
        let sched = LrSchedule { milestones: vec![10, 20], decay: 0.1 };
        assert_eq!(sched.lr_at(1e-4, 0), 1e-4);
        assert_eq!(sched.lr_at(1e-4, 9), 1e-4);
        assert_eq!(sched.lr_at(1e-4, 10), 1e-5);
        let after_second = sched.lr_at(1e-4, 25);
        assert!((after_second - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn fraction_milestones_map_onto_step_budget() {
        let sched = LrSchedule::from_fractions(&[2.0 / 3.0, 5.0 / 6.0, 29.0 / 30.0], 3000, 0.1);
        assert_eq!(sched.milestones, vec![2000, 2500, 2900]);
    }
}
