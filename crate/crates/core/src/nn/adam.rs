use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients are checked for finiteness first; on
    /// failure nothing is modified.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!("gradient {i} of length {}", p.len()), g.len()));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient array {i}, element {j}")));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..g.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(0.01);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut [&mut p], &[vec![3.0, -0.2]]).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert!((p[1] - (1.0 + 0.01)).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_does_not_move() {
        let mut opt = Adam::new(0.1);
        let mut p = vec![2.5];
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[vec![0.0]]).unwrap();
        }
        assert_eq!(p[0], 2.5);
    }

    #[test]
    fn convex_quadratic_decreases() {
        // f(x) = Σ (x_i - c_i)^2
        let c = [3.0, -1.0, 0.5];
        let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut opt = Adam::new(0.05);
        let mut x = vec![0.0; 3];
        let mut prev = f(&x);
        for _ in 0..100 {
            let g: Vec<f64> = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
            opt.step(&mut [&mut x], &[g]).unwrap();
            let cur = f(&x);
            assert!(cur < prev, "{cur} >= {prev}");
            prev = cur;
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut opt = Adam::new(0.1);
        let mut p = vec![1.0];
        assert!(matches!(
            opt.step(&mut [&mut p], &[vec![f64::NAN]]),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p[0], 1.0);
    }
}
