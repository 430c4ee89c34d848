//! Adam and a cosine-annealed learning rate.

use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Per-epoch cosine decay from `max_lr` at epoch 0 to `min_lr` at the last epoch.
#[derive(Clone, Copy, Debug)]
pub struct CosineAnnealing {
    pub max_lr: f64,
    pub min_lr: f64,
    pub epochs: usize,
}

impl CosineAnnealing {
    pub fn lr(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.max_lr;
        }
        let last = (self.epochs - 1) as f64;
        let progress = (epoch as f64).min(last) / last;
        self.min_lr + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(3, 0.9, 0.999);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[3.0, -0.02, 1e3], 1e-3);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-2.0 + 1e-3)).abs() < 1e-8);
        assert!((p[2] - (0.5 - 1e-3)).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn schedule_endpoints() {
        let s = CosineAnnealing {
            max_lr: 1e-3,
            min_lr: 1e-5,
            epochs: 200,
        };
        assert!((s.lr(0) - 1e-3).abs() <= 1e-12);
        assert!((s.lr(199) - 1e-5).abs() <= 1e-12);
        assert!((s.lr(99) - s.lr(100)) > 0.0);
        let mid = CosineAnnealing {
            max_lr: 1.0,
            min_lr: 0.0,
            epochs: 3,
        };
        assert!((mid.lr(1) - 0.5).abs() < 1e-15);
        assert_eq!(
            CosineAnnealing {
                max_lr: 0.1,
                min_lr: 0.0,
                epochs: 1
            }
            .lr(0),
            0.1
        );
    }
}
