use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

/// Adam with bias correction, no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    beta1_t: f64,
    beta2_t: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam { lr, beta1: betas.0, beta2: betas.1, eps, beta1_t: 1.0, beta2_t: 1.0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Drop the first-moment estimate of one coordinate.
    pub(crate) fn clear_momentum(&mut self, i: usize) {
        self.m[i] = 0.0;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.beta1_t *= self.beta1;
        self.beta2_t *= self.beta2;
        let step = self.lr / (1.0 - self.beta1_t);
        let bc2 = 1.0 - self.beta2_t;
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (sqrt(*v / bc2) + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(2, 0.1, (0.9, 0.999), 1e-8);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.01]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(1, 0.05, (0.9, 0.999), 1e-8);
        let mut p = [5.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
