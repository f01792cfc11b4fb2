//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Result<Self> {
        let c = config;
        if !(c.step_size > 0.0
            && (0.0..1.0).contains(&c.beta1)
            && (0.0..1.0).contains(&c.beta2)
            && c.eps > 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "invalid Adam configuration {c:?}"
            )));
        }
        Ok(Self {
            config,
            first: vec![0.0; param_count],
            second: vec![0.0; param_count],
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of `theta` against gradient `g`.
    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        if theta.len() != self.first.len() || g.len() != self.first.len() {
            return Err(Error::LengthMismatch {
                expected: self.first.len(),
                got: if theta.len() != self.first.len() {
                    theta.len()
                } else {
                    g.len()
                },
            });
        }
        self.steps += 1;
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &gi), m), v) in theta
            .iter_mut()
            .zip(g)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= step_size * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = AdamState::new(AdamConfig::default(), 3).unwrap();
        let mut th = vec![1.0, -2.0, 0.5];
        for _ in 0..100 {
            s.step(&mut th, &[0.0; 3]).unwrap();
        }
        assert_eq!(th, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_has_closed_form() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(cfg, 3).unwrap();
        let mut th = vec![1.0, -2.0, 0.5];
        let g = [0.3, -4.0, 1e-9];
        s.step(&mut th, &g).unwrap();
        for (i, (t0, gi)) in [1.0, -2.0, 0.5].iter().zip(g).enumerate() {
            let expect = t0 - cfg.step_size * gi / (gi.abs() + cfg.eps);
            assert!((th[i] - expect).abs() < 1e-15, "{i}: {} vs {expect}", th[i]);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut s = AdamState::new(AdamConfig::default(), 3).unwrap();
        let mut th = vec![0.0; 2];
        assert!(s.step(&mut th, &[0.0; 2]).is_err());
        let mut th = vec![0.0; 3];
        assert!(s.step(&mut th, &[0.0; 4]).is_err());
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let run = || {
            let mut s = AdamState::new(AdamConfig::default(), 2).unwrap();
            let mut th = vec![0.1, 0.2];
            for k in 0..50 {
                let g = [(k as f64).sin(), th[0] - th[1]];
                s.step(&mut th, &g).unwrap();
            }
            th
        };
        assert_eq!(run(), run());
    }
}
