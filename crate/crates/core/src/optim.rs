use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent, for diagnosis.
    GradientDescent,
}

/// Element-wise Adam (or plain SGD) over one flat parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    kind: OptimizerKind,
    rates: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, kind: OptimizerKind) -> Self {
        Self::with_rates(vec![lr; len], kind)
    }

    pub fn with_rates(rates: Vec<f64>, kind: OptimizerKind) -> Self {
        let len = rates.len();
        Self {
            kind,
            rates,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Returns the step to *add* to the parameters.
    pub fn step(&mut self, grads: &[f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.rates.len(), "gradient length");
        self.t += 1;
        match self.kind {
            OptimizerKind::GradientDescent => grads.iter().zip(&self.rates).map(|(g, lr)| -lr * g).collect(),
            OptimizerKind::Adam => {
                let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
                let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
                let mut out = Vec::with_capacity(grads.len());
                for (i, &g) in grads.iter().enumerate() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    out.push(-self.rates[i] * m_hat / (math::sqrt(v_hat) + self.eps));
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut a = Adam::new(2, 0.1, OptimizerKind::Adam);
        let s = a.step(&[3.0, -0.001]);
        assert!((s[0] + 0.1).abs() < 1e-6);
        assert!((s[1] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = [5.0, -3.0];
        let mut a = Adam::new(2, 0.1, OptimizerKind::Adam);
        for _ in 0..2000 {
            let g = [2.0 * x[0], 8.0 * x[1]];
            let s = a.step(&g);
            x[0] += s[0];
            x[1] += s[1];
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn gradient_descent_step() {
        let mut a = Adam::new(1, 0.5, OptimizerKind::GradientDescent);
        assert_eq!(a.step(&[2.0]), alloc::vec![-1.0]);
    }
}
