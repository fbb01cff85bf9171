//! Linear noise schedule, closed-form forward noising and the η = 0 DDIM step.
//!
//! Two index spaces meet here. A *sampler step* `s ∈ [0, N]` counts DDIM
//! updates from pure noise (`s = 0`) to the final sample (`s = N`). A
//! *timestep* `t ∈ [0, T]` is the matching position on the training
//! schedule, `t = ⌊T·(N − s)/N⌋`. Timestep `t ≥ 1` carries the noise level
//! `alpha_bars[t − 1]`, and timestep 0 is the clean boundary with ᾱ = 1.
//! [`NoiseSchedule::forward_diffuse`] addresses the table directly, so
//! `forward_diffuse(x0, i, ε)` is the state at timestep `i + 1`.

use crate::{Error, Point, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_train: usize,
    n_sampler: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// One position on the sampling trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerStep {
    pub s: usize,
    pub t: usize,
}

impl NoiseSchedule {
    /// Builds a linear β schedule with `t_train` entries between `beta_min`
    /// and `beta_max` (inclusive) and a sampler of `n_sampler` steps.
    pub fn new(t_train: usize, beta_min: f64, beta_max: f64, n_sampler: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
            )));
        }
        if n_sampler == 0 || t_train < n_sampler {
            return Err(Error::InvalidRange(format!(
                "need T_train >= N_sampler >= 1, got T_train={t_train}, N_sampler={n_sampler}"
            )));
        }
        let betas: Vec<f64> = if t_train == 1 {
            vec![beta_min]
        } else {
            let span = beta_max - beta_min;
            let denom = (t_train - 1) as f64;
            (0..t_train).map(|i| beta_min + span * i as f64 / denom).collect()
        };
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, beta| {
                *acc *= 1.0 - beta;
                Some(*acc)
            })
            .collect();
        Ok(Self { t_train, n_sampler, betas, alpha_bars })
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    pub fn n_sampler(&self) -> usize {
        self.n_sampler
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// ᾱ at timestep `t ∈ [0, T]`, with ᾱ(0) = 1.
    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.t_train => Ok(self.alpha_bars[t - 1]),
            _ => Err(Error::out_of_range("timestep", t as i64, 0, self.t_train as i64)),
        }
    }

    /// `x_t = √ᾱ·x0 + √(1−ᾱ)·ε` using table entry `index`.
    pub fn forward_diffuse(&self, x0: Point, index: usize, noise: Point) -> Result<Point> {
        let ab = *self
            .alpha_bars
            .get(index)
            .ok_or_else(|| Error::out_of_range("t", index as i64, 0, self.t_train as i64 - 1))?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok([a * x0[0] + b * noise[0], a * x0[1] + b * noise[1]])
    }

    pub fn step_to_timestep(&self, s: usize) -> Result<usize> {
        if s > self.n_sampler {
            return Err(Error::out_of_range("sampler step", s as i64, 0, self.n_sampler as i64));
        }
        Ok(self.t_train * (self.n_sampler - s) / self.n_sampler)
    }

    pub fn sampler_step(&self, s: usize) -> Result<SamplerStep> {
        Ok(SamplerStep { s, t: self.step_to_timestep(s)? })
    }

    /// Advances the state at sampler step `s` to step `s + 1` given the
    /// predicted noise. The last step returns the predicted clean point.
    pub fn ddim_step(&self, x_t: Point, eps_hat: Point, s: usize) -> Result<Point> {
        if s >= self.n_sampler {
            return Err(Error::out_of_range("sampler step", s as i64, 0, self.n_sampler as i64 - 1));
        }
        let ab = self.alpha_bar_at(self.step_to_timestep(s)?)?;
        let ab_next = self.alpha_bar_at(self.step_to_timestep(s + 1)?)?;
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let x0 = [(x_t[0] - sb * eps_hat[0]) / sa, (x_t[1] - sb * eps_hat[1]) / sa];
        if s + 1 == self.n_sampler {
            return Ok(x0);
        }
        let (na, nb) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
        Ok([na * x0[0] + nb * eps_hat[0], na * x0[1] + nb * eps_hat[1]])
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(1000, 1e-4, 0.02, 50).expect("default schedule parameters are valid")
    }
}
