use super::{Denoiser, ParamSubset};
use crate::{Error, Result};

/// Bias-corrected Adam with per-subset masking.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn for_model(model: &Denoiser, lr: f64) -> Self {
        Self::new(model.num_params(), lr)
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

    /// Applies one update to the parameters inside `subset`. Parameters and
    /// moments outside the subset are left untouched.
    pub fn update(&mut self, model: &mut Denoiser, grads: &[f64], subset: ParamSubset) -> Result<()> {
        let ranges = subset.ranges(model.layout());
        self.update_ranges(model.params_mut(), grads, &ranges)
    }

    pub fn update_ranges(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        ranges: &[std::ops::Range<usize>],
    ) -> Result<()> {
        for len in [params.len(), grads.len()] {
            if len != self.m.len() {
                return Err(Error::ShapeMismatch { expected: self.m.len(), got: len });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for r in ranges {
            for i in r.clone() {
                let g = grads[i];
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
