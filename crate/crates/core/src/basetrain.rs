//! Base training of the conditional denoiser and guided DDIM sampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::ConceptSpec;
use crate::condmodel::{
    cfg_combine, Adam, BackwardScratch, Condition, Denoiser, ForwardCache, ModelDims, ParamSubset, TokenSeq,
};
use crate::schedule::NoiseSchedule;
use crate::{rng, Error, Point, Result};

/// One Gaussian component of the labeled mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub center: Point,
    pub std: f64,
}

/// A labeled isotropic Gaussian mixture; mode `k` realizes concept `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDataset {
    pub modes: Vec<Mode>,
    pub concepts: Vec<ConceptSpec>,
}

/// Centers of the default four-concept layout.
pub const DEFAULT_CENTERS: [Point; 4] = [[4.0, 4.0], [-4.0, 4.0], [-4.0, -4.0], [4.0, -4.0]];
pub const DEFAULT_STD: f64 = 0.5;

impl MixtureDataset {
    pub fn new(modes: Vec<Mode>, concepts: Vec<ConceptSpec>) -> Result<Self> {
        let ds = Self { modes, concepts };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.len() < 2 {
            return Err(Error::InvalidConcept("the mixture needs at least two modes".into()));
        }
        if self.modes.len() != self.concepts.len() {
            return Err(Error::InvalidConcept(format!(
                "{} modes but {} concepts",
                self.modes.len(),
                self.concepts.len()
            )));
        }
        let max_std = self.modes.iter().map(|m| m.std).fold(0.0, f64::max);
        if self.modes.iter().any(|m| !(m.std > 0.0)) {
            return Err(Error::InvalidConcept("mode std must be positive".into()));
        }
        for (i, a) in self.modes.iter().enumerate() {
            for b in &self.modes[..i] {
                let dist = ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2)).sqrt();
                if dist < 6.0 * max_std {
                    return Err(Error::InvalidConcept(format!(
                        "modes at {:?} and {:?} are closer than 6x the largest std",
                        a.center, b.center
                    )));
                }
            }
        }
        for c in &self.concepts {
            c.validate()?;
        }
        Ok(())
    }

    pub fn max_std(&self) -> f64 {
        self.modes.iter().map(|m| m.std).fold(0.0, f64::max)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Point) {
        let k = rng.gen_range(0..self.modes.len());
        let m = &self.modes[k];
        let z = rng::normal_point(rng);
        (k, [m.center[0] + m.std * z[0], m.center[1] + m.std * z[1]])
    }
}

/// Default concept `k`: the phrase `[1, 8 + k]` with the keyword at position 1.
pub fn default_concept<R: Rng + ?Sized>(k: usize, n_rules: usize, rng: &mut R) -> Result<ConceptSpec> {
    let tokens = TokenSeq::new(vec![8 + k as u32], ModelDims::default().vocab)?;
    ConceptSpec::with_default_aliases(format!("concept{k}"), tokens, vec![0], n_rules, None, rng)
}

impl Default for MixtureDataset {
    fn default() -> Self {
        let mut rng = rng::stream(0, rng::AUGMENT);
        let concepts = (0..4).map(|k| default_concept(k, 10, &mut rng)).collect::<Result<Vec<_>>>();
        let modes = DEFAULT_CENTERS.iter().map(|&center| Mode { center, std: DEFAULT_STD }).collect();
        Self::new(modes, concepts.expect("default concepts are valid")).expect("default dataset is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub cond_dropout: f64,
    pub lr: f64,
    /// Probability of conditioning on a random alias instead of the canonical phrase.
    pub alias_prob: f64,
    pub seed: u64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self { iterations: 20_000, batch: 64, cond_dropout: 0.1, lr: 8e-3, alias_prob: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Denoiser,
    /// `(iteration, mean batch loss)`.
    pub log: Vec<(usize, f64)>,
}

/// Noise-matching training with condition dropout.
///
/// Each example draws a table index `i`, noises a data point to
/// `x = forward_diffuse(x0, i, ε)` and regresses `ε` at timestep `i + 1`.
pub fn train_base(
    dataset: &MixtureDataset,
    config: &BaseTrainConfig,
    schedule: &NoiseSchedule,
    dims: ModelDims,
) -> Result<TrainOutput> {
    dataset.validate()?;
    if !(0.0..1.0).contains(&config.cond_dropout) && config.cond_dropout != 1.0 {
        return Err(Error::InvalidRange(format!("cond_dropout {} outside [0, 1]", config.cond_dropout)));
    }
    for c in &dataset.concepts {
        for seq in std::iter::once(&c.tokens).chain(&c.aliases) {
            TokenSeq::new(seq.tokens().to_vec(), dims.vocab)?;
        }
    }
    let mut rng = rng::stream(config.seed, rng::BASE);
    let mut model = Denoiser::new(dims, &mut rng);
    let mut opt = Adam::for_model(&model, config.lr);
    let mut grads = model.zero_grads();
    let mut cache = ForwardCache::default();
    let mut scratch = BackwardScratch::default();
    let null = TokenSeq::empty();
    let mut log = Vec::with_capacity(config.iterations);
    let inv_batch = 1.0 / config.batch as f64;

    for it in 0..config.iterations {
        opt.lr = cosine_lr(config.lr, it, config.iterations);
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..config.batch {
            let (k, x0) = dataset.draw(&mut rng);
            let index = rng.gen_range(0..schedule.t_train());
            let eps = rng::normal_point(&mut rng);
            let x = schedule.forward_diffuse(x0, index, eps)?;
            let concept = &dataset.concepts[k];
            let cond = if rng.gen_bool(config.cond_dropout) {
                &null
            } else if rng.gen_bool(config.alias_prob) {
                concept.aliases.choose(&mut rng).expect("validated concept has aliases")
            } else {
                &concept.tokens
            };
            let out = model.forward(x, index + 1, Condition::Tokens(cond), &mut cache);
            let diff = [out[0] - eps[0], out[1] - eps[1]];
            loss += (diff[0] * diff[0] + diff[1] * diff[1]) * inv_batch;
            let adj = [2.0 * diff[0] * inv_batch, 2.0 * diff[1] * inv_batch];
            model.backward(&cache, adj, &mut grads, &mut scratch)?;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss });
        }
        opt.update(&mut model, &grads, ParamSubset::All)?;
        log.push((it, loss));
    }
    Ok(TrainOutput { model, log })
}

/// Cosine decay from `base` down to 5% of `base` at the last iteration.
pub fn cosine_lr(base: f64, it: usize, iterations: usize) -> f64 {
    let frac = if iterations > 1 { it as f64 / (iterations - 1) as f64 } else { 0.0 };
    base * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Runs guided DDIM from sampler step `from` to `to` starting at `x`.
pub fn denoise_range(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    c: &TokenSeq,
    w: f64,
    mut x: Point,
    from: usize,
    to: usize,
    cache: &mut ForwardCache,
) -> Result<Point> {
    if from > to || to > schedule.n_sampler() {
        return Err(Error::out_of_range("stop step", to as i64, from as i64, schedule.n_sampler() as i64));
    }
    let null = TokenSeq::empty();
    for s in from..to {
        let t = schedule.step_to_timestep(s)?;
        let eps_u = model.forward(x, t, Condition::Tokens(&null), cache);
        let eps = if c.is_empty() {
            eps_u
        } else {
            let eps_c = model.forward(x, t, Condition::Tokens(c), cache);
            cfg_combine(eps_u, eps_c, w)
        };
        x = schedule.ddim_step(x, eps, s)?;
    }
    if !(x[0].is_finite() && x[1].is_finite()) {
        return Err(Error::NonFinite(format!("sampling trajectory diverged at {x:?}")));
    }
    Ok(x)
}

fn sample_one(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    c: &TokenSeq,
    w: f64,
    stop: usize,
    seed: u64,
    index: u64,
) -> Result<Point> {
    let x = rng::normal_point(&mut rng::indexed(seed, index));
    denoise_range(model, schedule, c, w, x, 0, stop, &mut ForwardCache::default())
}

/// `n` guided samples; sample `i` starts from counter stream `(seed, i)`.
pub fn sample(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    c: &TokenSeq,
    w: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Point>> {
    let n_steps = schedule.n_sampler();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n as u64).into_par_iter().map(|i| sample_one(model, schedule, c, w, n_steps, seed, i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n as u64).map(|i| sample_one(model, schedule, c, w, n_steps, seed, i)).collect()
    }
}

pub fn sample_unconditional(model: &Denoiser, schedule: &NoiseSchedule, n: usize, seed: u64) -> Result<Vec<Point>> {
    sample(model, schedule, &TokenSeq::empty(), 0.0, n, seed)
}

/// The trajectory state after `stop_s` sampler steps, from counter stream `(seed, 0)`.
pub fn sample_partial(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    c: &TokenSeq,
    w: f64,
    stop_s: usize,
    seed: u64,
) -> Result<Point> {
    if stop_s > schedule.n_sampler() {
        return Err(Error::out_of_range("stop step", stop_s as i64, 0, schedule.n_sampler() as i64));
    }
    sample_one(model, schedule, c, w, stop_s, seed, 0)
}

/// Writes `iteration,loss` rows.
pub fn train_log_csv(log: &[(usize, f64)]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (it, loss) in log {
        out.push_str(&format!("{it},{loss}\n"));
    }
    out
}
