//! Plain gradient descent and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{PltmError, Result};

fn check_shapes(params: usize, grad: usize) -> Result<()> {
    if params != grad {
        return Err(PltmError::ShapeMismatch {
            expected: params,
            actual: grad,
        });
    }
    Ok(())
}

/// `θ ← θ - η g`, in place.
pub fn gd_step(params: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
    check_shapes(params.len(), grad.len())?;
    if !(eta > 0.0) {
        return Err(PltmError::InvalidParameter {
            name: "lr",
            reason: format!("learning rate must be positive, got {eta}"),
        });
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= eta * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_shapes(self.m.len(), params.len())?;
        check_shapes(params.len(), grad.len())?;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gd_examples() {
        let mut p = vec![1.0, 1.0];
        gd_step(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, 1.0]);
        gd_step(&mut p, &[1.0, -1.0], 0.1).unwrap();
        assert_eq!(p, vec![0.9, 1.1]);
        assert!(gd_step(&mut p, &[1.0], 0.1).is_err());
        assert!(gd_step(&mut p, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn two_gd_steps_equal_one_double_step() {
        let g = [0.25, -0.5, 2.0];
        let mut a = vec![1.0, 2.0, 3.0];
        let mut b = a.clone();
        gd_step(&mut a, &g, 0.125).unwrap();
        gd_step(&mut a, &g, 0.125).unwrap();
        gd_step(&mut b, &g, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut p = vec![0.5, -1.0, 2.0];
        state.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut state = AdamState::new(4, AdamConfig::default());
        let mut p = vec![0.0; 4];
        let g = [3.0, -0.01, 1e4, -7.0];
        state.step(&mut p, &g).unwrap();
        for (x, gi) in p.iter().zip(g) {
            assert!((x + 1e-3 * gi.signum()).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        let mut state = AdamState::new(
            1,
            AdamConfig {
                lr: 0.01,
                ..Default::default()
            },
        );
        let mut theta = vec![1.0];
        for _ in 0..2000 {
            let g = [2.0 * theta[0]];
            state.step(&mut theta, &g).unwrap();
        }
        assert!(theta[0].abs() < 1e-3, "{}", theta[0]);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut state = AdamState::new(2, AdamConfig::default());
        assert!(state.step(&mut [0.0, 0.0], &[1.0]).is_err());
        assert!(state.step(&mut [0.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn adam_steps_are_bounded_and_finite(
            grads in proptest::collection::vec(proptest::collection::vec(-1e6..1e6f64, 5), 1..40),
        ) {
            let cfg = AdamConfig::default();
            let mut state = AdamState::new(5, cfg);
            let mut p = vec![0.0; 5];
            for g in &grads {
                let before = p.clone();
                state.step(&mut p, g).unwrap();
                for (a, b) in p.iter().zip(&before) {
                    prop_assert!(a.is_finite());
                    prop_assert!((a - b).abs() <= 10.0 * cfg.lr);
                }
            }
        }

        #[test]
        fn adam_is_deterministic(g in proptest::collection::vec(-10.0..10.0f64, 4)) {
            let mut s1 = AdamState::new(4, AdamConfig::default());
            let mut s2 = s1.clone();
            let mut p1 = vec![1.0, 2.0, 3.0, 4.0];
            let mut p2 = p1.clone();
            s1.step(&mut p1, &g).unwrap();
            s2.step(&mut p2, &g).unwrap();
            prop_assert_eq!(p1, p2);
            prop_assert_eq!(s1, s2);
        }
    }
}
