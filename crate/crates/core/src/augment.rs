//! Prompt augmentation over the toy token vocabulary.
//!
//! A concept is expanded into aliases by wrapping its canonical phrase in
//! fixed prefix/suffix token motifs. During unlearning each alias is further
//! perturbed (non-keyword drops, shuffles, random insertions) and the
//! projected embedding receives isotropic Gaussian jitter.

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::condmodel::{Condition, Denoiser, TokenSeq, MAX_TOKENS};
use crate::{rng, Error, Result};

/// Token ids that wrap a concept phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub prefix: Vec<u32>,
    pub suffix: Vec<u32>,
}

impl Template {
    pub fn identity() -> Self {
        Self { prefix: Vec::new(), suffix: Vec::new() }
    }

    fn new(prefix: &[u32], suffix: &[u32]) -> Self {
        Self { prefix: prefix.to_vec(), suffix: suffix.to_vec() }
    }

    pub fn apply(&self, tokens: &TokenSeq) -> Result<TokenSeq> {
        let mut out = self.prefix.clone();
        out.extend_from_slice(tokens.tokens());
        out.extend_from_slice(&self.suffix);
        if out.len() > MAX_TOKENS {
            return Err(Error::InvalidConcept(format!("template expansion has {} tokens", out.len())));
        }
        Ok(TokenSeq::from_vec_unchecked(out))
    }
}

/// The shipped pool: identity plus nine motifs drawn from filler ids 16..=35.
pub fn default_template_pool() -> Vec<Template> {
    vec![
        Template::identity(),
        Template::new(&[16, 17], &[]),
        Template::new(&[], &[18]),
        Template::new(&[19], &[20]),
        Template::new(&[21, 22, 23], &[]),
        Template::new(&[], &[24, 25]),
        Template::new(&[26], &[27, 28]),
        Template::new(&[29, 30], &[]),
        Template::new(&[], &[31, 32, 33]),
        Template::new(&[34], &[35]),
    ]
}

/// Expands `tokens` with `n_rules` distinct templates chosen from `pool`.
pub fn build_alias_set<R: Rng + ?Sized>(
    tokens: &TokenSeq,
    n_rules: usize,
    pool: &[Template],
    rng: &mut R,
) -> Result<Vec<TokenSeq>> {
    if n_rules == 0 {
        return Err(Error::InvalidConcept("at least one augmentation rule is required".into()));
    }
    if pool.len() < n_rules {
        return Err(Error::PoolTooSmall { pool: pool.len(), requested: n_rules });
    }
    let mut picks = sample_indices(rng, pool.len(), n_rules).into_vec();
    picks.sort_unstable();
    let aliases = picks.into_iter().map(|i| pool[i].apply(tokens)).collect::<Result<Vec<_>>>()?;
    for (i, a) in aliases.iter().enumerate() {
        if aliases[..i].contains(a) {
            return Err(Error::InvalidConcept(format!("template pool yields duplicate alias {:?}", a.tokens())));
        }
    }
    Ok(aliases)
}

/// Ids from here up are reserved as "scrambled" filler for insertion.
pub const FIRST_JUNK_TOKEN: u32 = 36;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    pub p_shuffle: f64,
    pub p_drop: f64,
    pub p_insert: f64,
    pub max_insert: usize,
    /// Inserted ids are drawn uniformly from `insert_from..vocab`.
    pub insert_from: u32,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { p_shuffle: 0.5, p_drop: 0.3, p_insert: 0.2, max_insert: 2, insert_from: FIRST_JUNK_TOKEN }
    }
}

impl PerturbConfig {
    pub fn disabled() -> Self {
        Self { p_shuffle: 0.0, p_drop: 0.0, p_insert: 0.0, max_insert: 0, insert_from: FIRST_JUNK_TOKEN }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_shuffle", self.p_shuffle), ("p_drop", self.p_drop), ("p_insert", self.p_insert)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidRange(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Randomly drops non-keywords, shuffles, and inserts random tokens.
/// Keywords always survive and the result never exceeds [`MAX_TOKENS`].
pub fn perturb_tokens<R: Rng + ?Sized>(
    seq: &TokenSeq,
    cfg: &PerturbConfig,
    keywords: &[u32],
    vocab: usize,
    rng: &mut R,
) -> TokenSeq {
    let mut out: Vec<u32> = Vec::with_capacity(MAX_TOKENS);
    for &tok in seq.tokens() {
        let keep = keywords.contains(&tok) || cfg.p_drop <= 0.0 || !rng.gen_bool(cfg.p_drop);
        if keep {
            out.push(tok);
        }
    }
    if cfg.p_shuffle > 0.0 && rng.gen_bool(cfg.p_shuffle) {
        out.shuffle(rng);
    }
    if cfg.p_insert > 0.0 && cfg.max_insert > 0 && rng.gen_bool(cfg.p_insert) {
        let n = rng.gen_range(1..=cfg.max_insert);
        for _ in 0..n {
            let tok = rng.gen_range(cfg.insert_from.min(vocab as u32 - 1)..vocab as u32);
            let at = rng.gen_range(0..=out.len());
            if out.len() < MAX_TOKENS {
                out.insert(at, tok);
            }
        }
    }
    TokenSeq::from_vec_unchecked(out)
}

/// A concept phrase with its keywords, aliases and embedding-noise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSpec {
    pub name: String,
    pub tokens: TokenSeq,
    /// Positions in `tokens` that hold keywords.
    pub keyword_positions: Vec<usize>,
    pub aliases: Vec<TokenSeq>,
    /// `None` means "derive from the model's token scale at unlearn start".
    pub sigma_embed: Option<f64>,
}

impl ConceptSpec {
    pub fn new(
        name: impl Into<String>,
        tokens: TokenSeq,
        keyword_positions: Vec<usize>,
        aliases: Vec<TokenSeq>,
        sigma_embed: Option<f64>,
    ) -> Result<Self> {
        let spec = Self { name: name.into(), tokens, keyword_positions, aliases, sigma_embed };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds aliases from the default pool.
    pub fn with_default_aliases<R: Rng + ?Sized>(
        name: impl Into<String>,
        tokens: TokenSeq,
        keyword_positions: Vec<usize>,
        n_rules: usize,
        sigma_embed: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let aliases = build_alias_set(&tokens, n_rules, &default_template_pool(), rng)?;
        Self::new(name, tokens, keyword_positions, aliases, sigma_embed)
    }

    pub fn keywords(&self) -> Vec<u32> {
        self.keyword_positions.iter().map(|&i| self.tokens.tokens()[i]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConcept(format!("{}: {msg}", self.name)));
        if self.tokens.is_empty() {
            return bad("concept needs at least one token".into());
        }
        if let Some(&p) = self.keyword_positions.iter().find(|&&p| p >= self.tokens.len()) {
            return bad(format!("keyword position {p} outside the phrase"));
        }
        if self.aliases.is_empty() {
            return bad("at least one alias is required".into());
        }
        let keywords = self.keywords();
        for (i, a) in self.aliases.iter().enumerate() {
            if !keywords.iter().all(|k| a.tokens().contains(k)) {
                return bad(format!("alias {:?} drops a keyword", a.tokens()));
            }
            if self.aliases[..i].contains(a) {
                return bad(format!("duplicate alias {:?}", a.tokens()));
            }
        }
        if matches!(self.sigma_embed, Some(s) if !(s >= 0.0 && s.is_finite())) {
            return bad("sigma_embed must be a finite value >= 0".into());
        }
        Ok(())
    }
}

/// An augmented conditioning input: perturbed alias tokens plus embedding jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCondition {
    pub tokens: TokenSeq,
    pub noise: Vec<f64>,
}

impl AugmentedCondition {
    pub fn as_condition(&self) -> Condition<'_> {
        Condition::Jittered { tokens: &self.tokens, noise: &self.noise }
    }

    /// The final embedding vector fed to the denoiser.
    pub fn embedding(&self, model: &Denoiser) -> Vec<f64> {
        let mut e = model.embed_condition(&self.tokens);
        e.iter_mut().zip(&self.noise).for_each(|(v, n)| *v += n);
        e
    }
}

/// Picks a random alias, perturbs it and draws embedding jitter of scale `sigma`.
pub fn make_augmented_condition<R: Rng + ?Sized>(
    model: &Denoiser,
    concept: &ConceptSpec,
    cfg: &PerturbConfig,
    sigma: f64,
    rng: &mut R,
) -> AugmentedCondition {
    let alias = concept.aliases.choose(rng).expect("validated concept has aliases");
    let tokens = perturb_tokens(alias, cfg, &concept.keywords(), model.dims().vocab, rng);
    let noise = (0..model.dims().d_cond).map(|_| if sigma > 0.0 { sigma * rng::normal(rng) } else { 0.0 }).collect();
    AugmentedCondition { tokens, noise }
}

/// Convenience wrapper returning only the embedding vector.
pub fn make_augmented_embedding<R: Rng + ?Sized>(
    model: &Denoiser,
    concept: &ConceptSpec,
    cfg: &PerturbConfig,
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    make_augmented_condition(model, concept, cfg, sigma, rng).embedding(model)
}
