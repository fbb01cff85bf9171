//! Key-step unlearning: the losses and the fine-tuning loop.
//!
//! The frozen *guidance* model supplies targets; the trainable *unlearn*
//! model is a clone of it. At every key step the unlearn model's conditional
//! prediction for the (augmented) forget concept is pulled toward the
//! negatively guided noise `ε_∅ − η(ε_c − ε_∅)`, while its unconditional
//! prediction is held near a slightly extrapolated copy of the guidance
//! model's.

use crate::augment::{make_augmented_condition, ConceptSpec, PerturbConfig};
use crate::basetrain::sample_partial;
use crate::condmodel::{Adam, BackwardScratch, Condition, Denoiser, ForwardCache, ParamSubset, TokenSeq};
use crate::keystep::{KeyStepTable, TableParams};
use crate::schedule::NoiseSchedule;
use crate::{rng, Error, Point, Result};

/// λ₁(t) = (T − t) / (200·T); for T = 1000 this is (1000 − t) / 2·10⁵.
pub fn lambda1(t: usize, t_train: usize) -> Result<f64> {
    if t > t_train {
        return Err(Error::out_of_range("timestep", t as i64, 0, t_train as i64));
    }
    Ok((t_train - t) as f64 / (200.0 * t_train as f64))
}

fn norm_and_unit(r: Point) -> (f64, Point) {
    let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
    if n == 0.0 {
        (0.0, [0.0, 0.0])
    } else {
        (n, [r[0] / n, r[1] / n])
    }
}

/// `‖ε*_c − (ε_∅ − η(ε_c − ε_∅))‖₂` and its gradient with respect to `ε*_c`.
pub fn loss_unlearn(eps_star_c: Point, eps_g_c: Point, eps_g_u: Point, eta: f64) -> (f64, Point) {
    let target = [eps_g_u[0] - eta * (eps_g_c[0] - eps_g_u[0]), eps_g_u[1] - eta * (eps_g_c[1] - eps_g_u[1])];
    norm_and_unit([eps_star_c[0] - target[0], eps_star_c[1] - target[1]])
}

/// `‖ε*_∅ − ((1 + λ₁)ε_∅ − λ₁ε_c)‖₂²` and its gradient with respect to `ε*_∅`.
pub fn loss_regular(
    eps_star_u: Point,
    eps_g_u: Point,
    eps_g_c: Point,
    t: usize,
    t_train: usize,
) -> Result<(f64, Point)> {
    let l1 = lambda1(t, t_train)?;
    let target = [(1.0 + l1) * eps_g_u[0] - l1 * eps_g_c[0], (1.0 + l1) * eps_g_u[1] - l1 * eps_g_c[1]];
    let r = [eps_star_u[0] - target[0], eps_star_u[1] - target[1]];
    Ok((r[0] * r[0] + r[1] * r[1], [2.0 * r[0], 2.0 * r[1]]))
}

pub fn loss_total(loss_unlearn: f64, loss_regular: f64, lambda2: f64) -> f64 {
    loss_unlearn + lambda2 * loss_regular
}

/// `‖ε*(c⁺) − ε(c⁻)‖₂` and its gradient with respect to `ε*(c⁺)`.
pub fn loss_target_replace(eps_star_cplus: Point, eps_g_cminus: Point) -> (f64, Point) {
    norm_and_unit([eps_star_cplus[0] - eps_g_cminus[0], eps_star_cplus[1] - eps_g_cminus[1]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnConfig {
    pub forget: Vec<ConceptSpec>,
    /// Replacement targets, parallel to `forget`.
    pub replace: Option<Vec<ConceptSpec>>,
    pub table: TableParams,
    pub lambda2: f64,
    pub eta: f64,
    pub w_sample: f64,
    pub subset: ParamSubset,
    pub lr: f64,
    pub augment: bool,
    pub perturb: PerturbConfig,
    /// Embedding noise as a multiple of the token RMS norm, for concepts without `sigma_embed`.
    pub sigma_scale: f64,
    pub seed: u64,
}

impl UnlearnConfig {
    pub fn new(forget: Vec<ConceptSpec>, table: TableParams) -> Self {
        Self {
            forget,
            replace: None,
            table,
            lambda2: 1e-4,
            eta: 1.0,
            w_sample: 3.0,
            subset: ParamSubset::Tokens,
            lr: 5e-2,
            augment: true,
            perturb: PerturbConfig::default(),
            sigma_scale: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.forget.is_empty() {
            return Err(Error::InvalidConcept("at least one forget concept is required".into()));
        }
        if let Some(r) = &self.replace {
            if r.len() != self.forget.len() {
                return Err(Error::InvalidConcept(format!(
                    "{} replacement concepts for {} forget concepts",
                    r.len(),
                    self.forget.len()
                )));
            }
        }
        if !(self.lambda2 >= 0.0) {
            return Err(Error::InvalidRange(format!("lambda2 must be >= 0, got {}", self.lambda2)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidRange(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.sigma_scale >= 0.0) {
            return Err(Error::InvalidRange(format!("sigma_scale must be >= 0, got {}", self.sigma_scale)));
        }
        self.perturb.validate()
    }

    pub fn objective(&self) -> Objective {
        if self.replace.is_some() {
            Objective::Replace
        } else {
            Objective::Unlearn
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Unlearn,
    Replace,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Unlearn => "unlearn",
            Objective::Replace => "replace",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnLogRow {
    pub iteration: usize,
    pub s: usize,
    pub t: usize,
    pub concept: usize,
    /// Value of the primary objective (unlearning or replacement loss).
    pub loss_unlearn: f64,
    pub loss_regular: f64,
    pub loss_total: f64,
}

#[derive(Debug, Clone)]
pub struct UnlearnOutput {
    pub model: Denoiser,
    pub objective: Objective,
    pub log: Vec<UnlearnLogRow>,
}

impl UnlearnOutput {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iteration,s,t,loss_unlearn,loss_regular,loss_total,concept,objective\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.s,
                r.t,
                r.loss_unlearn,
                r.loss_regular,
                r.loss_total,
                r.concept,
                self.objective.name()
            ));
        }
        out
    }
}

/// Fine-tunes a clone of `base` with one update per key-step table entry.
pub fn run_unlearning(base: &Denoiser, cfg: &UnlearnConfig, schedule: &NoiseSchedule) -> Result<UnlearnOutput> {
    cfg.validate()?;
    let table = KeyStepTable::generate(cfg.table)?;
    if cfg.table.end > schedule.n_sampler() {
        return Err(Error::out_of_range("key-step end", cfg.table.end as i64, 0, schedule.n_sampler() as i64));
    }
    for c in cfg.forget.iter().chain(cfg.replace.iter().flatten()) {
        c.validate()?;
        TokenSeq::new(c.tokens.tokens().to_vec(), base.dims().vocab)?;
    }

    let guidance = base;
    let mut model = base.clone();
    let mut opt = Adam::for_model(&model, cfg.lr);
    let default_sigma = cfg.sigma_scale * base.token_rms_norm();
    let mut aug_rng = rng::stream(cfg.seed, rng::AUGMENT);
    let sample_seed = rng::substream_seed(cfg.seed, rng::UNLEARN);
    let null = TokenSeq::empty();
    let t_train = schedule.t_train();

    let mut grads = model.zero_grads();
    let (mut cache_c, mut cache_u, mut probe) =
        (ForwardCache::default(), ForwardCache::default(), ForwardCache::default());
    let mut scratch = BackwardScratch::default();
    let mut log = Vec::with_capacity(table.len());

    for (iteration, &s) in table.entries().iter().enumerate() {
        let t = schedule.step_to_timestep(s)?;
        let k = iteration % cfg.forget.len();
        let concept = &cfg.forget[k];

        let x_t = sample_partial(
            &model,
            schedule,
            &concept.tokens,
            cfg.w_sample,
            s,
            rng::child_seed(sample_seed, iteration as u64),
        )?;

        let augmented = if cfg.augment {
            let sigma = concept.sigma_embed.unwrap_or(default_sigma);
            make_augmented_condition(&model, concept, &cfg.perturb, sigma, &mut aug_rng)
        } else {
            crate::augment::AugmentedCondition { tokens: concept.tokens.clone(), noise: vec![0.0; model.dims().d_cond] }
        };

        let g_u = guidance.forward(x_t, t, Condition::Tokens(&null), &mut probe);
        let g_c = guidance.forward(x_t, t, Condition::Tokens(&concept.tokens), &mut probe);
        let star_c = model.forward(x_t, t, augmented.as_condition(), &mut cache_c);
        let star_u = model.forward(x_t, t, Condition::Tokens(&null), &mut cache_u);

        let (lu, adj_c) = match &cfg.replace {
            None => loss_unlearn(star_c, g_c, g_u, cfg.eta),
            Some(targets) => {
                let g_minus = guidance.forward(x_t, t, Condition::Tokens(&targets[k].tokens), &mut probe);
                loss_target_replace(star_c, g_minus)
            }
        };
        let (lr_, adj_u) = loss_regular(star_u, g_u, g_c, t, t_train)?;
        let total = loss_total(lu, lr_, cfg.lambda2);
        if !total.is_finite() {
            return Err(Error::Diverged { iteration, loss: total });
        }

        grads.iter_mut().for_each(|g| *g = 0.0);
        model.backward(&cache_c, adj_c, &mut grads, &mut scratch)?;
        model.backward(&cache_u, [cfg.lambda2 * adj_u[0], cfg.lambda2 * adj_u[1]], &mut grads, &mut scratch)?;
        opt.update(&mut model, &grads, cfg.subset)?;

        log.push(UnlearnLogRow { iteration, s, t, concept: k, loss_unlearn: lu, loss_regular: lr_, loss_total: total });
    }
    Ok(UnlearnOutput { model, objective: cfg.objective(), log })
}
