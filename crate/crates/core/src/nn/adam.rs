use serde::{Deserialize, Serialize};

use super::qnet::CategoricalQNet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single tensor. `t` is the 1-based step count.
pub fn adam_update(
    cfg: &AdamConfig,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam state for every parameter tensor of a network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the accumulated gradients of `net`. Non-finite gradients abort the step
    /// without touching any parameter.
    pub fn step(&mut self, net: &mut CategoricalQNet) -> Result<()> {
        let mut finite = true;
        net.visit_params(&mut |_, _, g| finite &= g.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Training("non-finite gradient".into()));
        }
        self.t += 1;
        let t = self.t;
        let cfg = self.config;
        let moments = &mut self.moments;
        let mut idx = 0;
        net.visit_params(&mut |_, p, g| {
            if moments.len() <= idx {
                moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            let (m, v) = &mut moments[idx];
            adam_update(&cfg, p, g, m, v, t);
            idx += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written out step by step.
    fn scalar_oracle(p0: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p0);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update(&cfg, &mut p, &[1.0], &mut m, &mut v, 1);
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert_eq!(p[0], scalar_oracle(0.0, &[1.0], 0.01));
    }

    #[test]
    fn matches_oracle_over_many_steps() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -1.2, 0.05, 2.0, 0.0, -0.7];
        let (mut p, mut m, mut v) = ([1.5], [0.0], [0.0]);
        for (i, g) in grads.iter().enumerate() {
            adam_update(&cfg, &mut p, &[*g], &mut m, &mut v, i as u64 + 1);
        }
        assert!((p[0] - scalar_oracle(1.5, &grads, 0.01)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.4, -2.0], [0.0; 2], [0.0; 2]);
        adam_update(&cfg, &mut p, &[0.0, 0.0], &mut m, &mut v, 1);
        assert_eq!(p, [0.4, -2.0]);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        let mut prev = p[0];
        for t in 1..=200 {
            adam_update(&cfg, &mut p, &[0.5], &mut m, &mut v, t);
            assert!(p[0] < prev);
            prev = p[0];
        }
    }
}
