//! Experiment configuration: a line-oriented `section.key = value` file.
//!
//! Every key has a default, unknown or repeated keys are rejected with the line
//! number, `#` starts a comment. [`ExperimentConfig::render`] writes the full
//! effective configuration back out in a form that re-parses to the same value.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::augment::{ConceptSpec, PerturbConfig};
use crate::basetrain::{BaseTrainConfig, MixtureDataset, Mode, DEFAULT_CENTERS, DEFAULT_STD};
use crate::condmodel::{ModelDims, ParamSubset, TokenSeq};
use crate::error::{Error, Result};
use crate::keystep::{preset_for_task, TableParams, Task};
use crate::schedule::NoiseSchedule;
use crate::spectra::{DiffusionNoise, GKind, SpectrumSpec, DEFAULT_OMEGA_GRID};
use crate::unlearn::UnlearnConfig;
use crate::{rng, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    pub t_train: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub n_sampler: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSection {
    pub name: String,
    pub tokens: Vec<u32>,
    pub keywords: Vec<usize>,
    pub center: Point,
    pub std: f64,
    pub sigma_embed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseSection {
    pub iterations: usize,
    pub batch: usize,
    pub cond_dropout: f64,
    pub lr: f64,
    pub alias_prob: f64,
}

/// Table parameters start from `task`'s preset; any explicit value overrides it.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnSection {
    pub task: Task,
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub len: Option<usize>,
    pub loop_n: usize,
    pub forget: Vec<usize>,
    pub replace: Vec<usize>,
    pub lambda2: f64,
    pub eta: f64,
    pub w_sample: f64,
    pub subset: ParamSubset,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSection {
    pub enabled: bool,
    pub perturb: PerturbConfig,
    pub n_rules: usize,
    pub sigma_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub n_samples: usize,
    pub w: f64,
    /// `None` means three times the largest mode std.
    pub radius: Option<f64>,
    /// Independent draw pairs averaged into the unconditional MMD.
    pub mmd_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectraSection {
    pub amplitude: f64,
    pub alpha: f64,
    pub g0: f64,
    pub g_kind: GKind,
    pub snr_th: f64,
    pub n_trials: usize,
    pub t: f64,
    pub n_points: usize,
    pub omega_grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateSection {
    pub fractions: Vec<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub model: ModelDims,
    pub concepts: Vec<ConceptSection>,
    pub base: BaseSection,
    pub unlearn: UnlearnSection,
    pub augment: AugmentSection,
    pub eval: EvalSection,
    pub spectra: SpectraSection,
    pub ablate: AblateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = BaseTrainConfig::default();
        let uc = UnlearnConfig::new(Vec::new(), preset_for_task(Task::Nsfw, 50));
        let spec = SpectrumSpec::default();
        let noise = DiffusionNoise::default();
        Self {
            seed: 0,
            schedule: ScheduleSection { t_train: 1000, beta_min: 1e-4, beta_max: 0.02, n_sampler: 50 },
            model: ModelDims::default(),
            concepts: (0..DEFAULT_CENTERS.len()).map(default_concept_section).collect(),
            base: BaseSection {
                iterations: base.iterations,
                batch: base.batch,
                cond_dropout: base.cond_dropout,
                lr: base.lr,
                alias_prob: base.alias_prob,
            },
            unlearn: UnlearnSection {
                task: Task::Nsfw,
                start: None,
                end: None,
                len: None,
                loop_n: 1,
                forget: vec![0],
                replace: Vec::new(),
                lambda2: uc.lambda2,
                eta: uc.eta,
                w_sample: uc.w_sample,
                subset: uc.subset,
                lr: uc.lr,
            },
            augment: AugmentSection {
                enabled: uc.augment,
                perturb: uc.perturb,
                n_rules: 10,
                sigma_scale: uc.sigma_scale,
            },
            eval: EvalSection { n_samples: 500, w: 3.0, radius: None, mmd_pairs: 10 },
            spectra: SpectraSection {
                amplitude: spec.amplitude,
                alpha: spec.alpha,
                g0: noise.g0,
                g_kind: noise.kind,
                snr_th: 1.0,
                n_trials: 1000,
                t: 1.0,
                n_points: spec.n_points,
                omega_grid: DEFAULT_OMEGA_GRID.to_vec(),
            },
            ablate: AblateSection { fractions: vec![0.0, 0.3], n_seeds: 3 },
        }
    }
}

fn default_concept_section(k: usize) -> ConceptSection {
    ConceptSection {
        name: format!("concept{k}"),
        tokens: vec![8 + k as u32],
        keywords: vec![0],
        center: DEFAULT_CENTERS.get(k).copied().unwrap_or([0.0, 0.0]),
        std: DEFAULT_STD,
        sigma_embed: None,
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse::<T>().map_err(|_| format!("bad list element `{}`", s.trim()))).collect()
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_auto<T: std::str::FromStr>(v: &str) -> std::result::Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" => Ok(true),
        "false" | "off" => Ok(false),
        _ => Err(format!("expected true/false, got `{v}`")),
    }
}

fn list<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn auto<T: std::fmt::Debug>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "auto".to_string(), |v| format!("{v:?}"))
}

impl ExperimentConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::Config { line, msg: format!("expected `key = value`, got `{body}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config { line, msg: format!("duplicate key `{key}`") });
            }
            cfg.set(key, value).map_err(|msg| Error::Config { line, msg })?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        if let Some(rest) = key.strip_prefix("concept.") {
            return self.set_concept(key, rest, v);
        }
        match key {
            "run.seed" => self.seed = parse_num(v)?,
            "schedule.t_train" => self.schedule.t_train = parse_num(v)?,
            "schedule.beta_min" => self.schedule.beta_min = parse_num(v)?,
            "schedule.beta_max" => self.schedule.beta_max = parse_num(v)?,
            "schedule.n_sampler" => self.schedule.n_sampler = parse_num(v)?,
            "model.vocab" => self.model.vocab = parse_num(v)?,
            "model.d_cond" => self.model.d_cond = parse_num(v)?,
            "model.d_time" => self.model.d_time = parse_num(v)?,
            "model.hidden" => self.model.hidden = parse_num(v)?,
            "dataset.n_concepts" => {
                let n: usize = parse_num(v)?;
                if n > 64 {
                    return Err(format!("dataset.n_concepts = {n} is too large"));
                }
                let have = self.concepts.len();
                self.concepts.truncate(n);
                self.concepts.extend((have..n).map(default_concept_section));
            }
            "base.iterations" => self.base.iterations = parse_num(v)?,
            "base.batch" => self.base.batch = parse_num(v)?,
            "base.cond_dropout" => self.base.cond_dropout = parse_num(v)?,
            "base.lr" => self.base.lr = parse_num(v)?,
            "base.alias_prob" => self.base.alias_prob = parse_num(v)?,
            "unlearn.task" => self.unlearn.task = v.parse().map_err(|e: Error| e.to_string())?,
            "unlearn.start" => self.unlearn.start = parse_auto(v)?,
            "unlearn.end" => self.unlearn.end = parse_auto(v)?,
            "unlearn.len" => self.unlearn.len = parse_auto(v)?,
            "unlearn.loop_n" => self.unlearn.loop_n = parse_num(v)?,
            "unlearn.forget" => self.unlearn.forget = parse_list(v)?,
            "unlearn.replace" => self.unlearn.replace = parse_list(v)?,
            "unlearn.lambda2" => self.unlearn.lambda2 = parse_num(v)?,
            "unlearn.eta" => self.unlearn.eta = parse_num(v)?,
            "unlearn.w_sample" => self.unlearn.w_sample = parse_num(v)?,
            "unlearn.subset" => self.unlearn.subset = v.parse()?,
            "unlearn.lr" => self.unlearn.lr = parse_num(v)?,
            "augment.enabled" => self.augment.enabled = parse_bool(v)?,
            "augment.p_shuffle" => self.augment.perturb.p_shuffle = parse_num(v)?,
            "augment.p_drop" => self.augment.perturb.p_drop = parse_num(v)?,
            "augment.p_insert" => self.augment.perturb.p_insert = parse_num(v)?,
            "augment.max_insert" => self.augment.perturb.max_insert = parse_num(v)?,
            "augment.insert_from" => self.augment.perturb.insert_from = parse_num(v)?,
            "augment.n_rules" => self.augment.n_rules = parse_num(v)?,
            "augment.sigma_scale" => self.augment.sigma_scale = parse_num(v)?,
            "eval.n_samples" => self.eval.n_samples = parse_num(v)?,
            "eval.w" => self.eval.w = parse_num(v)?,
            "eval.radius" => self.eval.radius = parse_auto(v)?,
            "eval.mmd_pairs" => self.eval.mmd_pairs = parse_num(v)?,
            "spectra.amplitude" => self.spectra.amplitude = parse_num(v)?,
            "spectra.alpha" => self.spectra.alpha = parse_num(v)?,
            "spectra.g0" => self.spectra.g0 = parse_num(v)?,
            "spectra.g_kind" => self.spectra.g_kind = v.parse()?,
            "spectra.snr_th" => self.spectra.snr_th = parse_num(v)?,
            "spectra.n_trials" => self.spectra.n_trials = parse_num(v)?,
            "spectra.t" => self.spectra.t = parse_num(v)?,
            "spectra.n_points" => self.spectra.n_points = parse_num(v)?,
            "spectra.omega_grid" => self.spectra.omega_grid = parse_list(v)?,
            "ablate.fractions" => self.ablate.fractions = parse_list(v)?,
            "ablate.n_seeds" => self.ablate.n_seeds = parse_num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn set_concept(&mut self, key: &str, rest: &str, v: &str) -> std::result::Result<(), String> {
        let unknown = || format!("unknown key `{key}`");
        let (index, field) = rest.split_once('.').ok_or_else(unknown)?;
        let index: usize = index.parse().map_err(|_| unknown())?;
        let n = self.concepts.len();
        let c = self.concepts.get_mut(index).ok_or_else(|| {
            format!("concept index {index} out of range (dataset.n_concepts = {n}; set it before concept keys)")
        })?;
        match field {
            "name" => {
                if v.is_empty() || v.contains(['#', ',']) {
                    return Err(format!("concept name `{v}` must be nonempty without `#` or `,`"));
                }
                c.name = v.to_string();
            }
            "tokens" => c.tokens = parse_list(v)?,
            "keywords" => c.keywords = parse_list(v)?,
            "center" => {
                let xy: Vec<f64> = parse_list(v)?;
                if xy.len() != 2 {
                    return Err(format!("center needs two coordinates, got {}", xy.len()));
                }
                c.center = [xy[0], xy[1]];
            }
            "std" => c.std = parse_num(v)?,
            "sigma_embed" => c.sigma_embed = parse_auto(v)?,
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Cross-field checks that the per-key parser cannot make.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.schedule().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.concepts.len() < 2 {
            return bad("at least two concepts are required".into());
        }
        for (i, c) in self.concepts.iter().enumerate() {
            if let Some(t) = c.tokens.iter().find(|&&t| t as usize >= self.model.vocab) {
                return bad(format!("concept.{i}.tokens: id {t} outside vocabulary of {}", self.model.vocab));
            }
        }
        self.dataset().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.base.cond_dropout) || !(0.0..=1.0).contains(&self.base.alias_prob) {
            return bad("base.cond_dropout and base.alias_prob must be probabilities".into());
        }
        if self.base.batch == 0 {
            return bad("base.batch must be >= 1".into());
        }
        let u = &self.unlearn;
        if u.forget.is_empty() {
            return bad("unlearn.forget needs at least one concept index".into());
        }
        for &k in u.forget.iter().chain(&u.replace) {
            if k >= self.concepts.len() {
                return bad(format!("concept index {k} in unlearn section out of range"));
            }
        }
        if !u.replace.is_empty() && u.replace.len() != u.forget.len() {
            return bad("unlearn.replace must be empty or as long as unlearn.forget".into());
        }
        let table = self.table_params();
        if table.start >= table.end || table.loop_n == 0 || table.end > self.schedule.n_sampler {
            return bad(format!(
                "key-step table needs S < E <= N_sampler and loop_n >= 1, got S={}, E={}, loop_n={}",
                table.start, table.end, table.loop_n
            ));
        }
        if self.augment.perturb.insert_from as usize >= self.model.vocab {
            return bad("augment.insert_from must be inside the vocabulary".into());
        }
        self.augment.perturb.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.eval.n_samples == 0 {
            return bad("eval.n_samples must be >= 1".into());
        }
        if self.eval.mmd_pairs == 0 {
            return bad("eval.mmd_pairs must be >= 1".into());
        }
        let (spec, noise) = self.spectra();
        spec.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        noise.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.spectra.n_trials < 2 || !(self.spectra.snr_th > 0.0) || !(self.spectra.t > 0.0) {
            return bad("spectra needs n_trials >= 2, snr_th > 0 and t > 0".into());
        }
        if self.ablate.fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
            return bad("ablate.fractions must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Full effective configuration, one key per line, in a fixed order.
    pub fn render(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("run.seed", self.seed.to_string());
        let s = &self.schedule;
        kv("schedule.t_train", s.t_train.to_string());
        kv("schedule.beta_min", format!("{:?}", s.beta_min));
        kv("schedule.beta_max", format!("{:?}", s.beta_max));
        kv("schedule.n_sampler", s.n_sampler.to_string());
        let m = &self.model;
        kv("model.vocab", m.vocab.to_string());
        kv("model.d_cond", m.d_cond.to_string());
        kv("model.d_time", m.d_time.to_string());
        kv("model.hidden", m.hidden.to_string());
        kv("dataset.n_concepts", self.concepts.len().to_string());
        for (i, c) in self.concepts.iter().enumerate() {
            kv(&format!("concept.{i}.name"), c.name.clone());
            kv(&format!("concept.{i}.tokens"), list(&c.tokens));
            kv(&format!("concept.{i}.keywords"), list(&c.keywords));
            kv(&format!("concept.{i}.center"), list(&c.center));
            kv(&format!("concept.{i}.std"), format!("{:?}", c.std));
            kv(&format!("concept.{i}.sigma_embed"), auto(&c.sigma_embed));
        }
        let b = &self.base;
        kv("base.iterations", b.iterations.to_string());
        kv("base.batch", b.batch.to_string());
        kv("base.cond_dropout", format!("{:?}", b.cond_dropout));
        kv("base.lr", format!("{:?}", b.lr));
        kv("base.alias_prob", format!("{:?}", b.alias_prob));
        let u = &self.unlearn;
        kv("unlearn.task", u.task.name().to_string());
        kv("unlearn.start", auto(&u.start));
        kv("unlearn.end", auto(&u.end));
        kv("unlearn.len", auto(&u.len));
        kv("unlearn.loop_n", u.loop_n.to_string());
        kv("unlearn.forget", list(&u.forget));
        kv("unlearn.replace", list(&u.replace));
        kv("unlearn.lambda2", format!("{:?}", u.lambda2));
        kv("unlearn.eta", format!("{:?}", u.eta));
        kv("unlearn.w_sample", format!("{:?}", u.w_sample));
        kv("unlearn.subset", u.subset.name().to_string());
        kv("unlearn.lr", format!("{:?}", u.lr));
        let a = &self.augment;
        kv("augment.enabled", a.enabled.to_string());
        kv("augment.p_shuffle", format!("{:?}", a.perturb.p_shuffle));
        kv("augment.p_drop", format!("{:?}", a.perturb.p_drop));
        kv("augment.p_insert", format!("{:?}", a.perturb.p_insert));
        kv("augment.max_insert", a.perturb.max_insert.to_string());
        kv("augment.insert_from", a.perturb.insert_from.to_string());
        kv("augment.n_rules", a.n_rules.to_string());
        kv("augment.sigma_scale", format!("{:?}", a.sigma_scale));
        let e = &self.eval;
        kv("eval.n_samples", e.n_samples.to_string());
        kv("eval.w", format!("{:?}", e.w));
        kv("eval.radius", auto(&e.radius));
        kv("eval.mmd_pairs", e.mmd_pairs.to_string());
        let sp = &self.spectra;
        kv("spectra.amplitude", format!("{:?}", sp.amplitude));
        kv("spectra.alpha", format!("{:?}", sp.alpha));
        kv("spectra.g0", format!("{:?}", sp.g0));
        kv("spectra.g_kind", sp.g_kind.name().to_string());
        kv("spectra.snr_th", format!("{:?}", sp.snr_th));
        kv("spectra.n_trials", sp.n_trials.to_string());
        kv("spectra.t", format!("{:?}", sp.t));
        kv("spectra.n_points", sp.n_points.to_string());
        kv("spectra.omega_grid", list(&sp.omega_grid));
        kv("ablate.fractions", list(&self.ablate.fractions));
        kv("ablate.n_seeds", self.ablate.n_seeds.to_string());
        o
    }

    /// SHA-256 of the rendered effective configuration, as lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::new(s.t_train, s.beta_min, s.beta_max, s.n_sampler)
    }

    /// Concepts with aliases drawn from the `augment` substream of the run seed.
    pub fn dataset(&self) -> Result<MixtureDataset> {
        let mut r = rng::stream(self.seed, rng::AUGMENT);
        let mut modes = Vec::with_capacity(self.concepts.len());
        let mut concepts = Vec::with_capacity(self.concepts.len());
        for c in &self.concepts {
            let tokens = TokenSeq::new(c.tokens.clone(), self.model.vocab)?;
            concepts.push(ConceptSpec::with_default_aliases(
                c.name.clone(),
                tokens,
                c.keywords.clone(),
                self.augment.n_rules,
                c.sigma_embed,
                &mut r,
            )?);
            modes.push(Mode { center: c.center, std: c.std });
        }
        MixtureDataset::new(modes, concepts)
    }

    pub fn base_train(&self) -> BaseTrainConfig {
        let b = &self.base;
        BaseTrainConfig {
            iterations: b.iterations,
            batch: b.batch,
            cond_dropout: b.cond_dropout,
            lr: b.lr,
            alias_prob: b.alias_prob,
            seed: self.seed,
        }
    }

    pub fn table_params(&self) -> TableParams {
        let u = &self.unlearn;
        let preset = preset_for_task(u.task, self.schedule.n_sampler);
        TableParams {
            start: u.start.unwrap_or(preset.start),
            end: u.end.unwrap_or(preset.end),
            len: u.len.unwrap_or(preset.len),
            loop_n: u.loop_n,
        }
    }

    pub fn unlearn_config(&self, dataset: &MixtureDataset) -> UnlearnConfig {
        let u = &self.unlearn;
        let pick = |ks: &[usize]| ks.iter().map(|&k| dataset.concepts[k].clone()).collect::<Vec<_>>();
        UnlearnConfig {
            replace: (!u.replace.is_empty()).then(|| pick(&u.replace)),
            lambda2: u.lambda2,
            eta: u.eta,
            w_sample: u.w_sample,
            subset: u.subset,
            lr: u.lr,
            augment: self.augment.enabled,
            perturb: self.augment.perturb,
            sigma_scale: self.augment.sigma_scale,
            seed: self.seed,
            ..UnlearnConfig::new(pick(&u.forget), self.table_params())
        }
    }

    pub fn spectra(&self) -> (SpectrumSpec, DiffusionNoise) {
        let s = &self.spectra;
        (
            SpectrumSpec {
                amplitude: s.amplitude,
                alpha: s.alpha,
                omega_grid: s.omega_grid.clone(),
                n_points: s.n_points,
            },
            DiffusionNoise { g0: s.g0, kind: s.g_kind },
        )
    }

    pub fn eval_radius(&self) -> f64 {
        self.eval.radius.unwrap_or_else(|| 3.0 * self.concepts.iter().map(|c| c.std).fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::parse("# nothing here\n\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.table_params(), TableParams { start: 15, end: 50, len: 750, loop_n: 1 });
    }

    #[test]
    fn default_dataset_matches_library_default() {
        assert_eq!(ExperimentConfig::default().dataset().unwrap(), MixtureDataset::default());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 17;
        cfg.unlearn.len = Some(300);
        cfg.unlearn.replace = vec![1];
        cfg.concepts[2].sigma_embed = Some(0.125);
        cfg.spectra.g_kind = GKind::Sqrt;
        cfg.base.lr = 1.0e-5;
        let text = cfg.render();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.render(), text);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::parse(
            "unlearn.len = 300\nrun.seed = 4  # trailing comment\nunlearn.subset = conditioning\n",
        )
        .unwrap();
        assert_eq!(cfg.table_params().len, 300);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.unlearn.subset, ParamSubset::Conditioning);
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn unknown_key_reports_line_and_name() {
        let err = ExperimentConfig::parse("run.seed = 1\n\nbase.iteratons = 5\n").unwrap_err();
        match err {
            Error::Config { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("base.iteratons"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        for (text, line) in [
            ("run.seed\n", 1),
            ("run.seed = x\n", 1),
            ("run.seed = 1\nrun.seed = 2\n", 2),
            ("concept.9.name = far\n", 1),
            ("unlearn.task = poetry\n", 1),
            ("eval.radius = wide\n", 1),
        ] {
            match ExperimentConfig::parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        for text in
            ["unlearn.start = 50\n", "unlearn.forget = 7\n", "concept.0.tokens = 99\n", "spectra.n_points = 100\n"]
        {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn extra_concepts() {
        let text = "dataset.n_concepts = 5\nconcept.4.center = 0,12\nconcept.4.tokens = 12\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.dataset().unwrap().modes.len(), 5);
        assert_eq!(ExperimentConfig::parse(&cfg.render()).unwrap(), cfg);
    }
}
