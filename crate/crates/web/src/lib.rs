//! Browser bindings for the unlearning lab.
//!
//! Three operations are exposed: key-step table generation, the analytic vs
//! Monte-Carlo SNR curve, and a small [`Lab`] that trains a base model,
//! samples from it and unlearns one concept. The plain-Rust functions carry
//! the logic so they can be tested natively; the `#[wasm_bindgen]` wrappers
//! only convert errors.

use wasm_bindgen::prelude::*;

use kscu_core::basetrain::{sample, sample_unconditional, train_base};
use kscu_core::condmodel::Denoiser;
use kscu_core::config::ExperimentConfig;
use kscu_core::keystep::generate_key_step_table;
use kscu_core::spectra::{snr_table, GKind};
use kscu_core::unlearn::run_unlearning;
use kscu_core::{rng, Result};

fn js(e: kscu_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

pub fn keystep_entries(start: usize, end: usize, len: usize, loop_n: usize) -> Result<Vec<u32>> {
    Ok(generate_key_step_table(start, end, len, loop_n)?.entries().iter().map(|&s| s as u32).collect())
}

/// Rows of `(omega, analytic_snr, empirical_snr, t_th_analytic, t_th_empirical)`, flattened.
pub fn snr_rows(alpha: f64, g0: f64, sqrt_g: bool, t: f64, n_trials: usize, seed: u64) -> Result<Vec<f64>> {
    let mut cfg = ExperimentConfig::default();
    cfg.spectra.alpha = alpha;
    cfg.spectra.g0 = g0;
    cfg.spectra.g_kind = if sqrt_g { GKind::Sqrt } else { GKind::Constant };
    cfg.spectra.t = t;
    cfg.spectra.n_trials = n_trials;
    cfg.validate()?;
    let (spec, noise) = cfg.spectra();
    let rows = snr_table(&spec, &noise, t, cfg.spectra.snr_th, n_trials, rng::substream_seed(seed, rng::SPECTRA))?;
    Ok(rows
        .iter()
        .flat_map(|r| [r.omega as f64, r.analytic_snr, r.empirical_snr, r.t_th_analytic, r.t_th_empirical])
        .collect())
}

#[wasm_bindgen(js_name = keystepTable)]
pub fn keystep_table(start: usize, end: usize, len: usize, loop_n: usize) -> std::result::Result<Vec<u32>, JsError> {
    keystep_entries(start, end, len, loop_n).map_err(js)
}

#[wasm_bindgen(js_name = snrCurve)]
pub fn snr_curve(
    alpha: f64,
    g0: f64,
    sqrt_g: bool,
    t: f64,
    n_trials: usize,
    seed: u64,
) -> std::result::Result<Vec<f64>, JsError> {
    snr_rows(alpha, g0, sqrt_g, t, n_trials, seed).map_err(js)
}

/// A base model plus its current unlearned copy.
#[wasm_bindgen]
pub struct Lab {
    cfg: ExperimentConfig,
    base: Denoiser,
    current: Denoiser,
    train_loss: Vec<f64>,
}

impl Lab {
    pub fn train(seed: u64, iterations: usize) -> Result<Lab> {
        let mut cfg = ExperimentConfig { seed, ..Default::default() };
        cfg.base.iterations = iterations;
        cfg.validate()?;
        let trained = train_base(&cfg.dataset()?, &cfg.base_train(), &cfg.schedule()?, cfg.model)?;
        Ok(Lab {
            train_loss: trained.log.iter().map(|&(_, l)| l).collect(),
            current: trained.model.clone(),
            base: trained.model,
            cfg,
        })
    }

    /// Flattened `[x0, y0, x1, y1, ...]`; `concept < 0` samples unconditionally.
    pub fn draw(&self, concept: i32, n: usize, seed: u64) -> Result<Vec<f64>> {
        let schedule = self.cfg.schedule()?;
        let seed = rng::substream_seed(seed, rng::EVAL);
        let points = if concept < 0 {
            sample_unconditional(&self.current, &schedule, n, seed)?
        } else {
            let ds = self.cfg.dataset()?;
            let c = ds
                .concepts
                .get(concept as usize)
                .ok_or_else(|| kscu_core::Error::InvalidConcept(format!("no concept {concept}")))?;
            sample(&self.current, &schedule, &c.tokens, self.cfg.eval.w, n, seed)?
        };
        Ok(points.into_iter().flatten().collect())
    }

    /// Replaces the current model with `base` unlearned on `concept` over a table of `len` entries.
    pub fn forget(&mut self, concept: usize, len: usize) -> Result<Vec<f64>> {
        let mut cfg = self.cfg.clone();
        cfg.unlearn.forget = vec![concept];
        cfg.unlearn.len = Some(len);
        cfg.validate()?;
        let out = run_unlearning(&self.base, &cfg.unlearn_config(&cfg.dataset()?), &cfg.schedule()?)?;
        self.current = out.model;
        Ok(out.log.iter().map(|r| r.loss_total).collect())
    }
}

#[wasm_bindgen]
impl Lab {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, iterations: usize) -> std::result::Result<Lab, JsError> {
        Lab::train(seed, iterations).map_err(js)
    }

    #[wasm_bindgen(js_name = trainLoss)]
    pub fn train_loss(&self) -> Vec<f64> {
        self.train_loss.clone()
    }

    #[wasm_bindgen(js_name = nConcepts)]
    pub fn n_concepts(&self) -> usize {
        self.cfg.concepts.len()
    }

    pub fn sample(&self, concept: i32, n: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
        self.draw(concept, n, seed).map_err(js)
    }

    /// Per-step total loss of the unlearning run.
    pub fn unlearn(&mut self, concept: usize, len: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.forget(concept, len).map_err(js)
    }

    pub fn reset(&mut self) {
        self.current = self.base.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_matches_hand_trace() {
        assert_eq!(keystep_entries(3, 5, 8, 2).unwrap(), vec![3, 4, 5, 3, 4, 5, 4, 5]);
        assert!(keystep_entries(5, 5, 1, 1).is_err());
    }

    #[test]
    fn snr_rows_are_flattened_five_wide() {
        let rows = snr_rows(2.0, 1.0, false, 1.0, 16, 0).unwrap();
        assert_eq!(rows.len(), 5 * ExperimentConfig::default().spectra.omega_grid.len());
        assert_eq!(rows[0], 1.0);
        assert!(snr_rows(2.0, 1.0, false, 1.0, 1, 0).is_err());
    }

    #[test]
    fn lab_round_trip() {
        let mut lab = Lab::train(0, 30).unwrap();
        assert_eq!(lab.train_loss.len(), 30);
        let before = lab.draw(0, 8, 1).unwrap();
        assert_eq!(before.len(), 16);
        assert_eq!(lab.draw(-1, 4, 1).unwrap().len(), 8);
        assert!(lab.draw(9, 4, 1).is_err());
        assert_eq!(lab.forget(0, 5).unwrap().len(), 5);
        assert_ne!(lab.draw(0, 8, 1).unwrap(), before);
        lab.reset();
        assert_eq!(lab.draw(0, 8, 1).unwrap(), before);
    }
}
