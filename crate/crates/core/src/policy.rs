//! Autoregressive categorical policies over a truncated context window.
//!
//! Two parameterizations share one interface:
//!
//! - `tabular`: one logit row per possible window content. Exactly enumerable,
//!   which is what makes the brute-force oracle exact; used by every identity
//!   test.
//! - `linear-head`: a weight matrix over a fixed one-hot encoding of the
//!   window slots plus a bias feature. Exercises non-tabular chain-rule
//!   gradients.
//!
//! Contexts are the last `window` tokens of `prompt ++ response_so_far`,
//! left-padded with a reserved PAD symbol when the history is shorter than the
//! window. Training gradients are always taken at temperature 1; the sampling
//! temperature is a separate knob.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{Question, TokenId};

/// Context window contents: exactly `window` symbols, each a token id or the
/// PAD symbol (`vocab_size`), oldest first.
pub type Context = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Tabular,
    LinearHead,
}

/// Learnable policy parameters: a flat logit table (tabular) or a weight
/// matrix over window features (linear head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    kind: ParamKind,
    vocab_size: usize,
    window: usize,
    params: Vec<f64>,
}

const MAX_TABLE_ENTRIES: usize = 1 << 24;

impl PolicyParams {
    /// All-zero parameters: the uniform policy.
    pub fn zeros(kind: ParamKind, vocab_size: usize, window: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidArgument("vocab_size must be >= 2".into()));
        }
        if window < 1 {
            return Err(Error::InvalidArgument("window must be >= 1".into()));
        }
        let len = match kind {
            ParamKind::Tabular => {
                let rows = (vocab_size + 1).checked_pow(window as u32).filter(|r| {
                    r.checked_mul(vocab_size)
                        .is_some_and(|n| n <= MAX_TABLE_ENTRIES)
                });
                match rows {
                    Some(rows) => rows * vocab_size,
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "tabular table (V+1)^W * V too large for V={vocab_size}, W={window}"
                        )))
                    }
                }
            }
            ParamKind::LinearHead => vocab_size * Self::feature_len_for(vocab_size, window),
        };
        Ok(PolicyParams {
            kind,
            vocab_size,
            window,
            params: vec![0.0; len],
        })
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// The PAD symbol used for short histories (one past the last token id).
    pub fn pad_symbol(&self) -> usize {
        self.vocab_size
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Add i.i.d. uniform noise in `[-scale, scale]` to every parameter.
    pub fn jitter(&mut self, scale: f64, rng: &mut impl Rng) {
        for p in &mut self.params {
            *p += rng.random_range(-scale..=scale);
        }
    }

    fn feature_len_for(vocab_size: usize, window: usize) -> usize {
        window * (vocab_size + 1) + 1
    }

    fn feature_len(&self) -> usize {
        Self::feature_len_for(self.vocab_size, self.window)
    }

    /// Last `window` symbols of `history`, left-padded with PAD.
    pub fn context_of(&self, history: &[TokenId]) -> Context {
        let w = self.window;
        let mut ctx = vec![self.pad_symbol(); w];
        let take = history.len().min(w);
        let start = history.len() - take;
        for (slot, &tok) in ctx[w - take..].iter_mut().zip(&history[start..]) {
            *slot = tok;
        }
        ctx
    }

    fn tabular_row(&self, ctx: &Context) -> usize {
        debug_assert_eq!(ctx.len(), self.window);
        let base = self.vocab_size + 1;
        let mut row = 0usize;
        for &sym in ctx {
            debug_assert!(sym <= self.vocab_size);
            row = row * base + sym;
        }
        row
    }

    /// Active feature indices for a context: one one-hot slot per window
    /// position plus the trailing bias feature.
    fn active_features(&self, ctx: &Context) -> Vec<usize> {
        let base = self.vocab_size + 1;
        let mut idx: Vec<usize> = ctx
            .iter()
            .enumerate()
            .map(|(slot, &sym)| slot * base + sym)
            .collect();
        idx.push(self.feature_len() - 1);
        idx
    }

    /// Raw logits for a context.
    pub fn logits(&self, ctx: &Context) -> Vec<f64> {
        match self.kind {
            ParamKind::Tabular => {
                let row = self.tabular_row(ctx) * self.vocab_size;
                self.params[row..row + self.vocab_size].to_vec()
            }
            ParamKind::LinearHead => {
                let f_len = self.feature_len();
                let active = self.active_features(ctx);
                (0..self.vocab_size)
                    .map(|v| active.iter().map(|&f| self.params[v * f_len + f]).sum())
                    .collect()
            }
        }
    }

    /// Next-token distribution at the given temperature.
    ///
    /// Temperature 0 is a point mass on the argmax logit, ties broken by the
    /// lowest token id.
    pub fn distribution(&self, ctx: &Context, temperature: f64) -> Result<Vec<f64>> {
        if temperature.is_nan() || temperature < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        let logits = self.logits(ctx);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFiniteParameters(ctx.clone()));
        }
        if temperature == 0.0 {
            let argmax = logits
                .iter()
                .enumerate()
                .fold(0usize, |best, (v, &l)| if l > logits[best] { v } else { best });
            let mut probs = vec![0.0; self.vocab_size];
            probs[argmax] = 1.0;
            return Ok(probs);
        }
        Ok(softmax_scaled(&logits, temperature))
    }

    /// `ln distribution(ctx, temperature)[token]`.
    pub fn log_prob(&self, ctx: &Context, token: TokenId, temperature: f64) -> Result<f64> {
        if token >= self.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "token id {token} out of range (V={})",
                self.vocab_size
            )));
        }
        let probs = self.distribution(ctx, temperature)?;
        Ok(probs[token].ln())
    }

    /// Accumulate `coef * d/dtheta[ ln pi(token | ctx) ]` into `grad`, at
    /// temperature 1.
    ///
    /// Tabular: the context's logit row receives `coef * (onehot - probs)`.
    /// Linear head: the same vector, outer-multiplied onto the active features.
    pub fn accumulate_log_prob_grad(
        &self,
        ctx: &Context,
        token: TokenId,
        coef: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let probs = self.distribution(ctx, 1.0)?;
        match self.kind {
            ParamKind::Tabular => {
                let row = self.tabular_row(ctx) * self.vocab_size;
                for (v, &p) in probs.iter().enumerate() {
                    let indicator = if v == token { 1.0 } else { 0.0 };
                    grad[row + v] += coef * (indicator - p);
                }
            }
            ParamKind::LinearHead => {
                let f_len = self.feature_len();
                let active = self.active_features(ctx);
                for (v, &p) in probs.iter().enumerate() {
                    let indicator = if v == token { 1.0 } else { 0.0 };
                    let g = coef * (indicator - p);
                    for &f in &active {
                        grad[v * f_len + f] += g;
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulate `sum_v coefs[v] * d/dtheta[ ln pi(v | ctx) ]` into `grad`,
    /// at temperature 1. Used by full-vocabulary objectives (top-K KL,
    /// entropy bonus) where every vocabulary entry carries a weight.
    pub fn accumulate_distribution_grad(
        &self,
        ctx: &Context,
        coefs: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        debug_assert_eq!(coefs.len(), self.vocab_size);
        let probs = self.distribution(ctx, 1.0)?;
        let total: f64 = coefs.iter().sum();
        match self.kind {
            ParamKind::Tabular => {
                let row = self.tabular_row(ctx) * self.vocab_size;
                for (v, &p) in probs.iter().enumerate() {
                    grad[row + v] += coefs[v] - total * p;
                }
            }
            ParamKind::LinearHead => {
                let f_len = self.feature_len();
                let active = self.active_features(ctx);
                for (v, &p) in probs.iter().enumerate() {
                    let g = coefs[v] - total * p;
                    for &f in &active {
                        grad[v * f_len + f] += g;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn validate_finite(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteParameters(vec![]));
        }
        Ok(())
    }
}

fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Shannon entropy of a distribution, in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Frozen copy of the policy taken at rollout time. Plays the role of the
/// sampling distribution in the importance ratio; immutable after creation.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    params: PolicyParams,
}

impl PolicySnapshot {
    pub fn of(params: &PolicyParams) -> Self {
        PolicySnapshot {
            params: params.clone(),
        }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherProvenance {
    HandBuilt,
    GrpoTrained,
}

/// Frozen teacher policy. No mutable access exists; the parameters cannot
/// change during student training.
#[derive(Debug, Clone)]
pub struct TeacherPolicy {
    params: PolicyParams,
    provenance: TeacherProvenance,
}

impl TeacherPolicy {
    pub fn new(params: PolicyParams, provenance: TeacherProvenance) -> Self {
        TeacherPolicy { params, provenance }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn provenance(&self) -> TeacherProvenance {
        self.provenance
    }
}

/// One sampled response with everything the objectives need: the token path,
/// per-token student log-probs at sampling time (temperature 1), optional
/// per-token teacher log-probs along the same path, the outcome reward, and
/// the truncation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub question_id: String,
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub student_logps: Vec<f64>,
    pub teacher_logps: Option<Vec<f64>>,
    pub reward: f64,
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    /// Context for response position `t` under a policy's window.
    pub fn context_at(&self, policy: &PolicyParams, t: usize) -> Context {
        debug_assert!(t < self.response.len());
        let mut history = Vec::with_capacity(self.prompt.len() + t);
        history.extend_from_slice(&self.prompt);
        history.extend_from_slice(&self.response[..t]);
        policy.context_of(&history)
    }

    /// Sum of per-token log-ratios `teacher - student` along the path.
    pub fn log_ratio_sum(&self) -> Result<f64> {
        let teacher = self
            .teacher_logps
            .as_ref()
            .ok_or(Error::MissingTeacherScores)?;
        Ok(teacher
            .iter()
            .zip(&self.student_logps)
            .map(|(t, s)| t - s)
            .sum())
    }
}

/// Sampling knobs: response length cap, sampling temperature, and the
/// end-of-sequence token id.
#[derive(Debug, Clone, Copy)]
pub struct SamplerSettings {
    pub max_len: usize,
    pub temperature: f64,
    pub eos: TokenId,
}

/// Autoregressively sample a response until EOS or `max_len` tokens.
///
/// The EOS token, when emitted, is part of the response and carries a
/// log-prob. Recorded student log-probs are taken at temperature 1 (the
/// distribution the objectives differentiate); the sampling temperature only
/// shapes the draw. The reward is left at 0 for the caller's verifier.
pub fn sample_sequence(
    policy: &PolicyParams,
    question: &Question,
    sampler: &SamplerSettings,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if sampler.max_len < 1 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let mut history = question.prompt.clone();
    let mut response = Vec::new();
    let mut logps = Vec::new();
    let mut truncated = true;
    for _ in 0..sampler.max_len {
        let ctx = policy.context_of(&history);
        let sample_dist = policy.distribution(&ctx, sampler.temperature)?;
        let token = draw(&sample_dist, rng);
        let logp = if sampler.temperature == 1.0 {
            sample_dist[token].ln()
        } else {
            policy.log_prob(&ctx, token, 1.0)?
        };
        response.push(token);
        logps.push(logp);
        history.push(token);
        if token == sampler.eos {
            truncated = false;
            break;
        }
    }
    Ok(Trajectory {
        question_id: question.id.clone(),
        prompt: question.prompt.clone(),
        response,
        student_logps: logps,
        teacher_logps: None,
        reward: 0.0,
        truncated,
    })
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (v, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return v;
        }
    }
    probs.len() - 1
}

/// Fill in per-token teacher log-probs along the student-sampled token path.
/// Student log-probs are untouched.
pub fn score_with_teacher(trajectory: &mut Trajectory, teacher: &TeacherPolicy) -> Result<()> {
    let mut logps = Vec::with_capacity(trajectory.len());
    for (t, &token) in trajectory.response.iter().enumerate() {
        let ctx = trajectory.context_at(teacher.params(), t);
        logps.push(teacher.params().log_prob(&ctx, token, 1.0)?);
    }
    trajectory.teacher_logps = Some(logps);
    Ok(())
}

pub const CHECKPOINT_SCHEMA: &str = "kdrl.checkpoint/1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    schema: String,
    kind: ParamKind,
    vocab_size: usize,
    window: usize,
    step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<TeacherProvenance>,
    params: Vec<f64>,
}

/// Versioned text checkpoint: parameter array plus its manifest. Finite f64
/// parameters round-trip bit-exactly through the shortest-representation
/// float encoding.
pub fn save_checkpoint(
    params: &PolicyParams,
    step: usize,
    provenance: Option<TeacherProvenance>,
    path: &Path,
) -> Result<()> {
    params.validate_finite()?;
    let file = CheckpointFile {
        schema: CHECKPOINT_SCHEMA.into(),
        kind: params.kind,
        vocab_size: params.vocab_size,
        window: params.window,
        step,
        provenance,
        params: params.params.clone(),
    };
    let body = serde_json::to_string(&file)?;
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a checkpoint written by [`save_checkpoint`]. Returns the parameters,
/// the recorded step count, and the teacher provenance tag when present.
pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams, usize, Option<TeacherProvenance>)> {
    let body =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: CheckpointFile = serde_json::from_str(&body).map_err(|e| {
        Error::IncompatibleCheckpoint(format!("{}: {e}", path.display()))
    })?;
    if file.schema != CHECKPOINT_SCHEMA {
        return Err(Error::IncompatibleCheckpoint(format!(
            "unsupported schema `{}`",
            file.schema
        )));
    }
    let expected = PolicyParams::zeros(file.kind, file.vocab_size, file.window)?;
    if file.params.len() != expected.param_len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "parameter array has {} entries, expected {}",
            file.params.len(),
            expected.param_len()
        )));
    }
    let params = PolicyParams {
        kind: file.kind,
        vocab_size: file.vocab_size,
        window: file.window,
        params: file.params,
    };
    params.validate_finite()?;
    Ok((params, file.step, file.provenance))
}
