use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam moments with an exponentially decaying learning rate `lr0 * lr_decay^epoch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr0: f64,
    pub lr_decay: f64,
}

impl AdamState {
    pub fn new(n: usize, lr0: f64, lr_decay: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            lr0,
            lr_decay,
        }
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * libm::pow(self.lr_decay, epoch as f64)
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|v| *v = 0.0);
        self.v.iter_mut().for_each(|v| *v = 0.0);
        self.t = 0;
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], epoch: usize) -> Result<()> {
        check_len("adam params", self.m.len(), params.len())?;
        check_len("adam grads", self.m.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure {
                epoch,
                reason: "non-finite gradient",
            });
        }
        self.t += 1;
        let lr = self.learning_rate(epoch);
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, 0.1, 0.99);
        let mut p = [1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3], 0).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_is_lr_in_gradient_direction() {
        // m_hat = g, v_hat = g^2 after one bias-corrected step: update = -lr g / (|g| + eps).
        let mut s = AdamState::new(1, 0.1, 1.0);
        let mut p = [0.0];
        s.step(&mut p, &[2.0], 0).unwrap();
        assert!((p[0] + 0.1).abs() <= 1e-6);
    }

    #[test]
    fn repeated_gradient_moves_monotonically() {
        let mut s = AdamState::new(1, 0.05, 1.0);
        let mut p = [1.0];
        let mut last = p[0];
        for _ in 0..2 {
            s.step(&mut p, &[-3.0], 0).unwrap();
            assert!(p[0] > last);
            last = p[0];
        }
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        let s = AdamState::new(1, 0.1, 0.5);
        assert!((s.learning_rate(3) - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut s = AdamState::new(1, 0.1, 1.0);
        let err = s.step(&mut [0.0], &[f64::NAN], 4).unwrap_err();
        assert_eq!(
            err,
            Error::TrainingFailure {
                epoch: 4,
                reason: "non-finite gradient"
            }
        );
    }
}
