//! Adam over flat parameter slices.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment estimates for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let lr = self.config.lr;
        self.update(params, grads, |_| lr)
    }

    /// Step with a per-element learning rate in place of `config.lr`.
    pub fn step_with_rates(&mut self, params: &mut [f64], grads: &[f64], rates: &[f64]) -> Result<()> {
        if rates.len() != params.len() {
            return Err(Error::Shape(format!("{} learning rates for {} params", rates.len(), params.len())));
        }
        self.update(params, grads, |i| rates[i])
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        crate::error::ensure_finite(grads, "gradient")?;
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grads[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grads[i] * grads[i];
            params[i] -= lr(i) * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut adam = Adam::new(3, AdamConfig::with_lr(0.1));
        adam.step(&mut p, &[3.0, -0.01, 0.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-4);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut adam = Adam::new(2, AdamConfig::with_lr(0.05));
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 1.0)];
            adam.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn per_element_rates_match_separate_optimizers() {
        let g = [0.3, -1.2];
        let mut p = vec![1.0, 2.0];
        let mut joint = Adam::new(2, AdamConfig::default());
        let (mut a, mut b) = (Adam::new(1, AdamConfig::with_lr(0.1)), Adam::new(1, AdamConfig::with_lr(0.01)));
        let (mut pa, mut pb) = (vec![1.0], vec![2.0]);
        for _ in 0..5 {
            joint.step_with_rates(&mut p, &g, &[0.1, 0.01]).unwrap();
            a.step(&mut pa, &g[..1]).unwrap();
            b.step(&mut pb, &g[1..]).unwrap();
        }
        assert_eq!(p, vec![pa[0], pb[0]]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut adam = Adam::new(2, AdamConfig::default());
        assert!(adam.step(&mut [0.0], &[0.0]).is_err());
        assert!(adam.step(&mut [0.0, 0.0], &[f64::NAN, 0.0]).is_err());
    }
}
