use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators mirroring a parameter set tensor by tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params<P: Params + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(config, &shapes)
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, mut params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != self.first[i].len() {
                return Err(Error::ShapeMismatch(format!(
                    "adam tensor {i}: expected {}, got params {} grads {}",
                    self.first[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let correction1 = 1.0 - beta1.powi(self.step as i32);
        let correction2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn step_params<P: Params + ?Sized, G: Params + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
    ) -> Result<()> {
        self.update(params.tensors_mut(), grads.tensors())
    }
}

/// Functional form: returns the updated parameters and leaves the inputs
/// untouched apart from the optimizer state.
pub fn adam_step(state: &mut AdamState, params: &[Vec<f64>], grads: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out = params.to_vec();
    state.update(
        out.iter_mut().map(|v| v.as_mut_slice()).collect(),
        grads.iter().map(|v| v.as_slice()).collect(),
    )?;
    Ok(out)
}
