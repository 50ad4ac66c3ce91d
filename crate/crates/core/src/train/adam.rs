use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers and step count of the ADAM optimizer.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One bias-corrected update of `values` from `grad`.
    pub fn update(&mut self, name: &str, values: &mut [f32], grad: &[f32]) -> Result<()> {
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                message: format!("non-finite gradient for parameter `{name}`"),
                index: Some(i),
            });
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
        if m.len() != grad.len() || values.len() != grad.len() {
            return Err(Error::shape(format!("optimizer state for `{name}` does not match its gradient")));
        }
        let t = self.t.max(1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..grad.len() {
            let g = grad[i] as f64;
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let step = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
            values[i] = (values[i] as f64 - step) as f32;
        }
        Ok(())
    }

    /// Applies one step to every trainable parameter holding a gradient.
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &ParamStore) -> Result<()> {
        let grads: Vec<(&str, Vec<f32>)> = params
            .trainable()
            .filter_map(|(name, t)| t.grad().map(|g| (name, g)))
            .collect();
        for (name, g) in &grads {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    message: format!("non-finite gradient for parameter `{name}`"),
                    index: Some(i),
                });
            }
        }
        self.t += 1;
        for (name, g) in grads {
            let tensor = params.get(name)?;
            let mut values = tensor.data_mut();
            self.update(name, &mut values, &g)?;
        }
        Ok(())
    }
}
