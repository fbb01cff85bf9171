//! The conditional noise predictor ε(x_t, t, c).
//!
//! Conditioning: token embeddings are mean-pooled and sent through an affine
//! projection (`cond_proj`). Together with the token table this forms the
//! *conditioning pathway*; everything after it is the *backbone*: two SiLU
//! layers of width `hidden` and a linear head to the 2-D output.
//!
//! All parameters live in one flat buffer so optimizers, masks and
//! checkpoints share a single layout.

mod adam;
pub mod checkpoint;

pub use adam::Adam;

use std::ops::Range;

use rand::Rng;

use crate::{rng, Error, Point, Result};

/// Longest accepted token sequence.
pub const MAX_TOKENS: usize = 8;

/// An ordered token sequence; empty means the unconditional input ∅.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(Vec<u32>);

impl TokenSeq {
    pub fn new(tokens: Vec<u32>, vocab: usize) -> Result<Self> {
        if tokens.len() > MAX_TOKENS {
            return Err(Error::InvalidConcept(format!(
                "token sequence of length {} exceeds {MAX_TOKENS}",
                tokens.len()
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::InvalidConcept(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        Ok(Self(tokens))
    }

    /// Builds a sequence the caller already knows to be valid.
    pub(crate) fn from_vec_unchecked(tokens: Vec<u32>) -> Self {
        debug_assert!(tokens.len() <= MAX_TOKENS);
        Self(tokens)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What the denoiser is conditioned on for one evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Condition<'a> {
    /// Tokens, pooled and projected. Empty tokens give ∅.
    Tokens(&'a TokenSeq),
    /// Tokens plus an additive jitter applied after the projection.
    /// Gradients still reach the conditioning pathway.
    Jittered { tokens: &'a TokenSeq, noise: &'a [f64] },
    /// A finished embedding; no gradient flows upstream of it.
    Embedding(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_cond: usize,
    pub d_time: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { vocab: 64, d_cond: 16, d_time: 16, hidden: 128 }
    }
}

impl ModelDims {
    pub fn input_width(&self) -> usize {
        2 + self.d_time + self.d_cond
    }
}

/// Offsets of each named tensor in the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub token_table: Range<usize>,
    pub cond_w: Range<usize>,
    pub cond_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub w3: Range<usize>,
    pub b3: Range<usize>,
}

impl Layout {
    pub fn new(d: &ModelDims) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Self {
            token_table: take(d.vocab * d.d_cond),
            cond_w: take(d.d_cond * d.d_cond),
            cond_b: take(d.d_cond),
            w1: take(d.hidden * d.input_width()),
            b1: take(d.hidden),
            w2: take(d.hidden * d.hidden),
            b2: take(d.hidden),
            w3: take(2 * d.hidden),
            b3: take(2),
        }
    }

    pub fn len(&self) -> usize {
        self.b3.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(name, shape, range)` for every trainable tensor, in buffer order.
    pub fn tensors(&self, d: &ModelDims) -> Vec<(&'static str, Vec<usize>, Range<usize>)> {
        vec![
            ("token_table", vec![d.vocab, d.d_cond], self.token_table.clone()),
            ("cond_proj.weight", vec![d.d_cond, d.d_cond], self.cond_w.clone()),
            ("cond_proj.bias", vec![d.d_cond], self.cond_b.clone()),
            ("layer1.weight", vec![d.hidden, d.input_width()], self.w1.clone()),
            ("layer1.bias", vec![d.hidden], self.b1.clone()),
            ("layer2.weight", vec![d.hidden, d.hidden], self.w2.clone()),
            ("layer2.bias", vec![d.hidden], self.b2.clone()),
            ("head.weight", vec![2, d.hidden], self.w3.clone()),
            ("head.bias", vec![2], self.b3.clone()),
        ]
    }
}

/// Which parameters an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSubset {
    /// Token table and conditioning projection.
    Conditioning,
    /// Token table only, a narrower slice of the conditioning pathway.
    Tokens,
    /// Everything except the conditioning pathway.
    Backbone,
    All,
}

impl ParamSubset {
    pub fn ranges(&self, layout: &Layout) -> Vec<Range<usize>> {
        let cond_end = layout.cond_b.end;
        match self {
            ParamSubset::Conditioning => vec![0..cond_end],
            ParamSubset::Tokens => vec![layout.token_table.clone()],
            ParamSubset::Backbone => vec![cond_end..layout.len()],
            ParamSubset::All => vec![0..layout.len()],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParamSubset::Conditioning => "conditioning",
            ParamSubset::Tokens => "tokens",
            ParamSubset::Backbone => "backbone",
            ParamSubset::All => "all",
        }
    }
}

impl std::str::FromStr for ParamSubset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "conditioning" | "conditioning-only" => Ok(ParamSubset::Conditioning),
            "tokens" => Ok(ParamSubset::Tokens),
            "backbone" | "backbone-only" => Ok(ParamSubset::Backbone),
            "all" => Ok(ParamSubset::All),
            other => Err(format!("unknown parameter subset `{other}`")),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoid frequencies for `d_time / 2` pairs, geometric from 1/2 down to 1/2000.
pub fn default_time_freqs(d_time: usize) -> Vec<f64> {
    let pairs = d_time / 2;
    let span = if pairs > 1 { (pairs - 1) as f64 } else { 1.0 };
    (0..pairs).map(|k| 0.5 * (-(1000f64.ln()) * k as f64 / span).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    dims: ModelDims,
    layout: Layout,
    time_freqs: Vec<f64>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`Denoiser::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    input: Vec<f64>,
    pooled: Vec<f64>,
    tokens: Vec<u32>,
    from_tokens: bool,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
}

/// Reusable scratch for backward passes.
#[derive(Debug, Clone, Default)]
pub struct BackwardScratch {
    g1: Vec<f64>,
    g2: Vec<f64>,
    gc: Vec<f64>,
    gp: Vec<f64>,
}

impl Denoiser {
    /// Random initialization: unit-normal token table, fan-in scaled weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let mut model = Self::zeros(dims);
        let layout = model.layout.clone();
        let fill = |p: &mut [f64], scale: f64, rng: &mut R| {
            for v in p {
                *v = scale * rng::normal(rng);
            }
        };
        fill(&mut model.params[layout.token_table.clone()], 1.0, rng);
        fill(&mut model.params[layout.cond_w.clone()], (1.0 / dims.d_cond as f64).sqrt(), rng);
        fill(&mut model.params[layout.w1.clone()], (2.0 / dims.input_width() as f64).sqrt(), rng);
        fill(&mut model.params[layout.w2.clone()], (2.0 / dims.hidden as f64).sqrt(), rng);
        fill(&mut model.params[layout.w3.clone()], (1.0 / dims.hidden as f64).sqrt(), rng);
        model
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let layout = Layout::new(&dims);
        Self { time_freqs: default_time_freqs(dims.d_time), params: vec![0.0; layout.len()], layout, dims }
    }

    pub(crate) fn from_parts(dims: ModelDims, time_freqs: Vec<f64>, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&dims);
        if params.len() != layout.len() {
            return Err(Error::ShapeMismatch { expected: layout.len(), got: params.len() });
        }
        if time_freqs.len() != dims.d_time / 2 {
            return Err(Error::ShapeMismatch { expected: dims.d_time / 2, got: time_freqs.len() });
        }
        Ok(Self { dims, layout, time_freqs, params })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn time_freqs(&self) -> &[f64] {
        &self.time_freqs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn token_row(&self, id: u32) -> &[f64] {
        let d = self.dims.d_cond;
        let start = self.layout.token_table.start + id as usize * d;
        &self.params[start..start + d]
    }

    /// Root-mean-square norm of the token embedding rows.
    pub fn token_rms_norm(&self) -> f64 {
        let table = &self.params[self.layout.token_table.clone()];
        (table.iter().map(|v| v * v).sum::<f64>() / self.dims.vocab as f64).sqrt()
    }

    fn pool(&self, tokens: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        if tokens.is_empty() {
            return;
        }
        for &id in tokens {
            for (o, v) in out.iter_mut().zip(self.token_row(id)) {
                *o += v;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    fn project(&self, pooled: &[f64], out: &mut [f64]) {
        let d = self.dims.d_cond;
        let w = &self.params[self.layout.cond_w.clone()];
        let b = &self.params[self.layout.cond_b.clone()];
        for i in 0..d {
            let row = &w[i * d..(i + 1) * d];
            out[i] = b[i] + row.iter().zip(pooled).map(|(a, p)| a * p).sum::<f64>();
        }
    }

    /// Mean-pooled, projected embedding of a token sequence.
    pub fn embed_condition(&self, c: &TokenSeq) -> Vec<f64> {
        let mut pooled = vec![0.0; self.dims.d_cond];
        let mut out = vec![0.0; self.dims.d_cond];
        self.pool(c.tokens(), &mut pooled);
        self.project(&pooled, &mut out);
        out
    }

    pub fn time_features(&self, t: f64, out: &mut [f64]) {
        for (k, f) in self.time_freqs.iter().enumerate() {
            out[2 * k] = (t * f).sin();
            out[2 * k + 1] = (t * f).cos();
        }
    }

    /// Validated single evaluation.
    pub fn predict_eps(&self, x: Point, t: usize, cond: Condition<'_>) -> Result<Point> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("denoiser input {x:?}")));
        }
        if let Condition::Embedding(e) | Condition::Jittered { noise: e, .. } = cond {
            if e.len() != self.dims.d_cond {
                return Err(Error::ShapeMismatch { expected: self.dims.d_cond, got: e.len() });
            }
            if !e.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("conditioning embedding".into()));
            }
        }
        let out = self.forward(x, t, cond, &mut ForwardCache::default());
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NonFinite(format!("denoiser output {out:?}")))
        }
    }

    /// Unchecked evaluation that records what [`Denoiser::backward`] needs.
    pub fn forward(&self, x: Point, t: usize, cond: Condition<'_>, cache: &mut ForwardCache) -> Point {
        let d = &self.dims;
        let (n_in, h) = (d.input_width(), d.hidden);
        cache.input.resize(n_in, 0.0);
        cache.pooled.resize(d.d_cond, 0.0);
        cache.input[0] = x[0];
        cache.input[1] = x[1];
        self.time_features(t as f64, &mut cache.input[2..2 + d.d_time]);
        let cond_slot = 2 + d.d_time..n_in;
        cache.tokens.clear();
        match cond {
            Condition::Tokens(seq) => {
                cache.from_tokens = true;
                cache.tokens.extend_from_slice(seq.tokens());
                let mut pooled = std::mem::take(&mut cache.pooled);
                self.pool(seq.tokens(), &mut pooled);
                self.project(&pooled, &mut cache.input[cond_slot]);
                cache.pooled = pooled;
            }
            Condition::Jittered { tokens, noise } => {
                cache.from_tokens = true;
                cache.tokens.extend_from_slice(tokens.tokens());
                let mut pooled = std::mem::take(&mut cache.pooled);
                self.pool(tokens.tokens(), &mut pooled);
                self.project(&pooled, &mut cache.input[cond_slot.clone()]);
                cache.pooled = pooled;
                for (c, n) in cache.input[cond_slot].iter_mut().zip(noise) {
                    *c += n;
                }
            }
            Condition::Embedding(e) => {
                cache.from_tokens = false;
                cache.input[cond_slot].copy_from_slice(e);
            }
        }

        let p = &self.params;
        let l = &self.layout;
        cache.z1.resize(h, 0.0);
        cache.h1.resize(h, 0.0);
        cache.z2.resize(h, 0.0);
        cache.h2.resize(h, 0.0);

        let (w1, b1) = (&p[l.w1.clone()], &p[l.b1.clone()]);
        for j in 0..h {
            let row = &w1[j * n_in..(j + 1) * n_in];
            let z = b1[j] + row.iter().zip(&cache.input).map(|(a, b)| a * b).sum::<f64>();
            cache.z1[j] = z;
            cache.h1[j] = silu(z);
        }
        let (w2, b2) = (&p[l.w2.clone()], &p[l.b2.clone()]);
        for j in 0..h {
            let row = &w2[j * h..(j + 1) * h];
            let z = b2[j] + row.iter().zip(&cache.h1).map(|(a, b)| a * b).sum::<f64>();
            cache.z2[j] = z;
            cache.h2[j] = silu(z);
        }
        let (w3, b3) = (&p[l.w3.clone()], &p[l.b3.clone()]);
        let mut out = [0.0; 2];
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &w3[o * h..(o + 1) * h];
            *slot = b3[o] + row.iter().zip(&cache.h2).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }

    /// Accumulates `∂(adjoint · output)/∂θ` into `grads` for the forward pass in `cache`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        adjoint: Point,
        grads: &mut [f64],
        scratch: &mut BackwardScratch,
    ) -> Result<()> {
        let d = &self.dims;
        let (n_in, h, dc) = (d.input_width(), d.hidden, d.d_cond);
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch { expected: self.params.len(), got: grads.len() });
        }
        if cache.input.len() != n_in || cache.h2.len() != h {
            return Err(Error::MissingCache);
        }
        let p = &self.params;
        let l = &self.layout;

        // head
        let w3 = &p[l.w3.clone()];
        scratch.g2.clear();
        scratch.g2.resize(h, 0.0);
        for o in 0..2 {
            let a = adjoint[o];
            if a == 0.0 {
                continue;
            }
            grads[l.b3.start + o] += a;
            let gw = &mut grads[l.w3.start + o * h..l.w3.start + (o + 1) * h];
            for ((g, hv), (w, g2)) in gw.iter_mut().zip(&cache.h2).zip(w3[o * h..].iter().zip(scratch.g2.iter_mut())) {
                *g += a * hv;
                *g2 += a * w;
            }
        }
        for (g, z) in scratch.g2.iter_mut().zip(&cache.z2) {
            *g *= silu_grad(*z);
        }

        // layer 2
        let w2 = &p[l.w2.clone()];
        scratch.g1.clear();
        scratch.g1.resize(h, 0.0);
        for j in 0..h {
            let gz = scratch.g2[j];
            grads[l.b2.start + j] += gz;
            if gz == 0.0 {
                continue;
            }
            let gw = &mut grads[l.w2.start + j * h..l.w2.start + (j + 1) * h];
            for (g, hv) in gw.iter_mut().zip(&cache.h1) {
                *g += gz * hv;
            }
            for (g1, w) in scratch.g1.iter_mut().zip(&w2[j * h..(j + 1) * h]) {
                *g1 += gz * w;
            }
        }
        for (g, z) in scratch.g1.iter_mut().zip(&cache.z1) {
            *g *= silu_grad(*z);
        }

        // layer 1; the input gradient is only needed on the conditioning slot
        let w1 = &p[l.w1.clone()];
        let c0 = 2 + d.d_time;
        scratch.gc.clear();
        scratch.gc.resize(dc, 0.0);
        for j in 0..h {
            let gz = scratch.g1[j];
            grads[l.b1.start + j] += gz;
            if gz == 0.0 {
                continue;
            }
            let gw = &mut grads[l.w1.start + j * n_in..l.w1.start + (j + 1) * n_in];
            for (g, v) in gw.iter_mut().zip(&cache.input) {
                *g += gz * v;
            }
            for (gc, w) in scratch.gc.iter_mut().zip(&w1[j * n_in + c0..(j + 1) * n_in]) {
                *gc += gz * w;
            }
        }

        if !cache.from_tokens {
            return Ok(());
        }
        // conditioning projection
        let cw = &p[l.cond_w.clone()];
        scratch.gp.clear();
        scratch.gp.resize(dc, 0.0);
        for i in 0..dc {
            let g = scratch.gc[i];
            grads[l.cond_b.start + i] += g;
            let gw = &mut grads[l.cond_w.start + i * dc..l.cond_w.start + (i + 1) * dc];
            for (gwv, pv) in gw.iter_mut().zip(&cache.pooled) {
                *gwv += g * pv;
            }
            for (gp, w) in scratch.gp.iter_mut().zip(&cw[i * dc..(i + 1) * dc]) {
                *gp += g * w;
            }
        }
        if cache.tokens.is_empty() {
            return Ok(());
        }
        let inv = 1.0 / cache.tokens.len() as f64;
        for &id in &cache.tokens {
            let start = l.token_table.start + id as usize * dc;
            for (g, gp) in grads[start..start + dc].iter_mut().zip(&scratch.gp) {
                *g += gp * inv;
            }
        }
        Ok(())
    }
}

/// Classifier-free guidance: `eps_u + w·(eps_c − eps_u)`.
#[inline]
pub fn cfg_combine(eps_u: Point, eps_c: Point, w: f64) -> Point {
    [eps_u[0] + w * (eps_c[0] - eps_u[0]), eps_u[1] + w * (eps_c[1] - eps_u[1])]
}
