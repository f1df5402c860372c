use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam with one pair of moment buffers per parameter slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, mut params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                layer: 0,
                expected: format!("{} gradient tensors", params.len()),
                got: format!("{}", grads.len()),
            });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || self.first.get(i).map(Vec::len) != Some(p.len()) {
                return Err(Error::Shape {
                    layer: i,
                    expected: format!("{} values", p.len()),
                    got: format!("{} gradient values", g.len()),
                });
            }
        }
        if self.first.len() != params.len() {
            return Err(Error::Shape {
                layer: 0,
                expected: format!("{} moment buffers", self.first.len()),
                got: format!("{} parameters", params.len()),
            });
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps_hat);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state() {
        let mut p = vec![0.5, -1.0];
        let mut adam = AdamState::new(1e-3);
        adam.step(vec![&mut p], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = vec![0.0];
        let mut adam = AdamState::new(1e-3);
        adam.step(vec![&mut p], &[vec![2.0]]).unwrap();
        let (m, v) = (adam.first[0][0], adam.second[0][0]);
        adam.step(vec![&mut p], &[vec![0.0]]).unwrap();
        assert_eq!(adam.first[0][0], 0.9 * m);
        assert_eq!(adam.second[0][0], 0.999 * v);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut adam = AdamState::new(0.001);
        adam.step(vec![&mut p], &[vec![1.0]]).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn constant_gradient_trace() {
        // With a constant gradient the bias-corrected moments are exactly g and
        // g^2, so each step moves by lr * |g| / (|g| + eps_hat).
        for g in [3.0, -0.25] {
            let mut p = vec![1.0];
            let mut adam = AdamState::new(0.01);
            let steps = 500;
            for _ in 0..steps {
                adam.step(vec![&mut p], &[vec![g]]).unwrap();
            }
            let per_step = 0.01 * g.abs() / (g.abs() + 1e-8);
            let expected = 1.0 - f64::signum(g) * per_step * steps as f64;
            assert!((p[0] - expected).abs() < 1e-9, "{} vs {expected}", p[0]);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 3];
        let mut adam = AdamState::new(0.1);
        assert!(adam.step(vec![&mut p], &[vec![0.0; 2]]).is_err());
        assert!(adam.step(vec![&mut p], &[]).is_err());
    }
}
