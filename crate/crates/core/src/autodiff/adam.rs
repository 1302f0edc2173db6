use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
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

/// Bias-corrected Adam moments for every tensor of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: params.tensors().map(|t| vec![0.0; t.len()]).collect(),
            second: params.tensors().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor<f64>]) -> Result<()> {
        if grads.len() != self.first.len() || params.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.first.len()
            )));
        }
        for (t, g) in params.tensors().zip(grads) {
            if t.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    t.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::new(1, values.len(), values.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = one_param(&[1.0, -2.0]);
        let before = p.clone();
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = one_param(&[0.0, 0.0, 0.0]);
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &[Tensor::new(1, 3, vec![0.3, -5.0, 1e-3]).unwrap()])
            .unwrap();
        let v = p.get("p").unwrap().data();
        // m̂ = g, v̂ = g², Δ = −lr·g/(|g| + ε)
        for (&x, g) in v.iter().zip([0.3f64, -5.0, 1e-3]) {
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((x - expected).abs() < 1e-15);
            assert!((x.abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn two_steps_match_reference() {
        let mut p = one_param(&[0.5, -0.25]);
        let mut adam = Adam::new(&p, AdamConfig::default());
        let grads = [[0.1, -0.2], [0.3, 0.05]];
        for g in grads {
            adam.step(&mut p, &[Tensor::new(1, 2, g.to_vec()).unwrap()])
                .unwrap();
        }
        // reference written out scalar by scalar
        let mut expected = [0.5f64, -0.25];
        for (i, e) in expected.iter_mut().enumerate() {
            let (mut m, mut v) = (0.0f64, 0.0f64);
            for (t, g) in grads.iter().enumerate() {
                let t = (t + 1) as i32;
                m = 0.9 * m + 0.1 * g[i];
                v = 0.999 * v + 0.001 * g[i] * g[i];
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                *e -= 1e-3 * mh / (vh.sqrt() + 1e-8);
            }
        }
        assert_eq!(p.get("p").unwrap().data(), &expected);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = one_param(&[0.0, 0.0]);
        let mut adam = Adam::new(&p, AdamConfig::default());
        assert!(adam.step(&mut p, &[Tensor::zeros(2, 1)]).is_err());
        assert!(adam.step(&mut p, &[]).is_err());
    }
}
