//! Embedding click scorer with an additive-attention user encoder.
//!
//! ```text
//! h_i = tanh(W e_i)          s_i = q . h_i          a = softmax(s)
//! u   = sum_i a_i e_i        score(c) = u . e_c
//! p   = exp(y+) / (exp(y+) + sum_j exp(y-_j))       L = -sum log p
//! ```
//!
//! Gradients are derived by hand and checked against central finite
//! differences in the tests.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{truncate_history, ArticleIdx, Catalog, Impression, DEFAULT_MAX_HISTORY};
use crate::rng::named_stream;
use crate::sampler::{epoch_samples, PopularSource, SamplerConfig, SamplerError, TrainingSample};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite in epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("no training samples could be built")]
    NoSamples,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    /// Row-major `|catalog| x dim`.
    pub embeddings: Vec<f64>,
    /// Row-major `dim x dim`.
    pub attn_w: Vec<f64>,
    pub attn_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    pub y_plus: f64,
    pub y_minus: Vec<f64>,
}

/// Gradient of the summed loss. Embedding rows that the batch never touched
/// are absent and read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: BTreeMap<ArticleIdx, Vec<f64>>,
    pub attn_w: Vec<f64>,
    pub attn_q: Vec<f64>,
}

struct Encoded {
    user: Vec<f64>,
    weights: Vec<f64>,
    hidden: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn new(dim: usize, n_articles: usize) -> Self {
        Self {
            dim,
            embeddings: vec![0.0; n_articles * dim],
            attn_w: vec![0.0; dim * dim],
            attn_q: vec![0.0; dim],
        }
    }

    /// Uniform(-scale, scale) initialization of every parameter.
    pub fn init<R: Rng + ?Sized>(dim: usize, n_articles: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::new(dim, n_articles);
        for v in p
            .embeddings
            .iter_mut()
            .chain(p.attn_w.iter_mut())
            .chain(p.attn_q.iter_mut())
        {
            *v = rng.random_range(-scale..scale);
        }
        p
    }

    pub fn n_articles(&self) -> usize {
        self.embeddings.len() / self.dim.max(1)
    }

    pub fn embedding(&self, a: ArticleIdx) -> &[f64] {
        &self.embeddings[a.get() * self.dim..(a.get() + 1) * self.dim]
    }

    pub fn embedding_mut(&mut self, a: ArticleIdx) -> &mut [f64] {
        let d = self.dim;
        &mut self.embeddings[a.get() * d..(a.get() + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.attn_w)
            .chain(&self.attn_q)
            .all(|v| v.is_finite())
    }

    fn encode(&self, history: &[ArticleIdx]) -> Encoded {
        let d = self.dim;
        let mut user = vec![0.0; d];
        if history.is_empty() {
            return Encoded {
                user,
                weights: Vec::new(),
                hidden: Vec::new(),
            };
        }
        let hidden: Vec<Vec<f64>> = history
            .iter()
            .map(|&a| {
                let e = self.embedding(a);
                (0..d)
                    .map(|r| dot(&self.attn_w[r * d..(r + 1) * d], e).tanh())
                    .collect()
            })
            .collect();
        let logits: Vec<f64> = hidden.iter().map(|h| dot(&self.attn_q, h)).collect();
        let weights = softmax(&logits);
        for (&a, &w) in history.iter().zip(&weights) {
            axpy(w, self.embedding(a), &mut user);
        }
        Encoded { user, weights, hidden }
    }

    /// Attention-pooled user vector; zero for an empty history. Callers
    /// truncate the history first.
    pub fn encode_user(&self, history: &[ArticleIdx]) -> Vec<f64> {
        self.encode(history).user
    }

    pub fn attention_weights(&self, history: &[ArticleIdx]) -> Vec<f64> {
        self.encode(history).weights
    }

    pub fn score(&self, user: &[f64], candidate: ArticleIdx) -> f64 {
        dot(user, self.embedding(candidate))
    }

    pub fn score_sample(&self, sample: &TrainingSample, max_history: usize) -> ScoredCandidates {
        let user = self.encode_user(truncate_history(&sample.history, max_history));
        ScoredCandidates {
            y_plus: self.score(&user, sample.positive),
            y_minus: sample.negatives.iter().map(|&n| self.score(&user, n)).collect(),
        }
    }

    /// Summed loss of `samples` and its exact gradient. Per-sample terms are
    /// reduced pairwise, splitting at the midpoint, so a batch followed by
    /// a copy of itself yields exactly twice the loss and gradient.
    pub fn gradients(&self, samples: &[TrainingSample], max_history: usize) -> (f64, Gradients) {
        match samples.len() {
            0 => (0.0, Gradients::zeros(self.dim)),
            1 => {
                let mut g = Gradients::zeros(self.dim);
                let loss = self.sample_gradient(&samples[0], max_history, &mut g);
                (loss, g)
            }
            n => {
                let (left, right) = samples.split_at(n / 2);
                let (mut loss, mut total) = self.gradients(left, max_history);
                let (loss_r, grad_r) = self.gradients(right, max_history);
                loss += loss_r;
                total.add(&grad_r);
                (loss, total)
            }
        }
    }

    fn sample_gradient(&self, sample: &TrainingSample, max_history: usize, g: &mut Gradients) -> f64 {
        let d = self.dim;
        let history = truncate_history(&sample.history, max_history);
        let enc = self.encode(history);

        let candidates: Vec<ArticleIdx> = std::iter::once(sample.positive)
            .chain(sample.negatives.iter().copied())
            .collect();
        let logits: Vec<f64> = candidates.iter().map(|&c| self.score(&enc.user, c)).collect();
        let probs = softmax(&logits);
        let loss = -log_softmax_first(&logits);

        // dL/dz = p - onehot(positive)
        let mut grad_user = vec![0.0; d];
        for (j, (&c, &p)) in candidates.iter().zip(&probs).enumerate() {
            let gz = if j == 0 { p - 1.0 } else { p };
            axpy(gz, self.embedding(c), &mut grad_user);
            axpy(gz, &enc.user, g.row(c, d));
        }
        if history.is_empty() {
            return loss;
        }

        let grad_weights: Vec<f64> = history.iter().map(|&a| dot(self.embedding(a), &grad_user)).collect();
        let mean = dot(&enc.weights, &grad_weights);
        for (i, &a) in history.iter().enumerate() {
            let w = enc.weights[i];
            axpy(w, &grad_user, g.row(a, d));

            let grad_logit = w * (grad_weights[i] - mean);
            let h = &enc.hidden[i];
            axpy(grad_logit, h, &mut g.attn_q);
            let grad_pre: Vec<f64> = (0..d)
                .map(|r| grad_logit * self.attn_q[r] * (1.0 - h[r] * h[r]))
                .collect();
            let e = self.embedding(a);
            for r in 0..d {
                axpy(grad_pre[r], e, &mut g.attn_w[r * d..(r + 1) * d]);
            }
            let row = g.row(a, d);
            for r in 0..d {
                axpy(grad_pre[r], &self.attn_w[r * d..(r + 1) * d], row);
            }
        }
        loss
    }

    /// `self -= step * grad`.
    pub fn apply(&mut self, grad: &Gradients, step: f64) {
        for (&a, row) in &grad.embeddings {
            axpy(-step, row, self.embedding_mut(a));
        }
        axpy(-step, &grad.attn_w, &mut self.attn_w);
        axpy(-step, &grad.attn_q, &mut self.attn_q);
    }
}

impl Gradients {
    pub fn zeros(dim: usize) -> Self {
        Self {
            embeddings: BTreeMap::new(),
            attn_w: vec![0.0; dim * dim],
            attn_q: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (&a, row) in &other.embeddings {
            let dim = row.len();
            axpy(1.0, row, self.row(a, dim));
        }
        axpy(1.0, &other.attn_w, &mut self.attn_w);
        axpy(1.0, &other.attn_q, &mut self.attn_q);
    }

    fn row(&mut self, a: ArticleIdx, dim: usize) -> &mut [f64] {
        self.embeddings.entry(a).or_insert_with(|| vec![0.0; dim])
    }

    pub fn embedding(&self, a: ArticleIdx) -> Option<&[f64]> {
        self.embeddings.get(&a).map(Vec::as_slice)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(logits)[0]`, stable.
fn log_softmax_first(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    logits[0] - max - total.ln()
}

impl ScoredCandidates {
    fn logits(&self) -> Vec<f64> {
        std::iter::once(self.y_plus).chain(self.y_minus.iter().copied()).collect()
    }
}

/// Softmax probability of the positive among itself and its `K` negatives.
/// Equal scores give exactly `1 / (K + 1)`.
pub fn posterior(scores: &ScoredCandidates) -> f64 {
    softmax(&scores.logits())[0]
}

/// Softmax over all `K + 1` outcomes, positive first.
pub fn outcome_probabilities(scores: &ScoredCandidates) -> Vec<f64> {
    softmax(&scores.logits())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSummary {
    pub total: f64,
    pub mean: f64,
}

/// `-sum log p_i` over the samples, with the mean for logging.
pub fn nll_loss(samples: &[ScoredCandidates]) -> LossSummary {
    let total: f64 = samples.iter().map(|s| -log_softmax_first(&s.logits())).sum();
    LossSummary {
        total,
        mean: if samples.is_empty() { 0.0 } else { total / samples.len() as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_history: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            learning_rate: 0.05,
            epochs: 3,
            batch_size: 8,
            max_history: DEFAULT_MAX_HISTORY,
            init_scale: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.max_history == 0 {
            return bad("max_history must be at least 1");
        }
        Ok(())
    }

    pub fn init_params(&self, n_articles: usize) -> ModelParams {
        ModelParams::init(self.dim, n_articles, self.init_scale, &mut named_stream(self.seed, "init", 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean loss on the first epoch's samples, measured after each epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean of the per-batch losses seen while training each epoch.
    pub running_loss: Vec<f64>,
    pub samples_per_epoch: Vec<usize>,
    pub skipped_no_positive: usize,
    pub skipped_no_negatives: usize,
}

fn mean_loss(params: &ModelParams, samples: &[TrainingSample], max_history: usize) -> f64 {
    let scored: Vec<ScoredCandidates> = samples.iter().map(|s| params.score_sample(s, max_history)).collect();
    nll_loss(&scored).mean
}

/// Mini-batch SGD on the summed loss. Negatives are redrawn every epoch.
pub fn train<S: PopularSource + Sync + ?Sized>(
    params: &mut ModelParams,
    impressions: &[Impression],
    source: &S,
    sampler: &SamplerConfig,
    config: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    config.validate()?;
    sampler.validate()?;
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(config.epochs),
        running_loss: Vec::with_capacity(config.epochs),
        samples_per_epoch: Vec::with_capacity(config.epochs),
        skipped_no_positive: 0,
        skipped_no_negatives: 0,
    };
    let mut reference: Vec<TrainingSample> = Vec::new();

    for epoch in 0..config.epochs {
        let drawn = epoch_samples(impressions, source, sampler, epoch as u32)?;
        if drawn.samples.is_empty() {
            return Err(ModelError::NoSamples);
        }
        if epoch == 0 {
            report.skipped_no_positive = drawn.skipped_no_positive;
            report.skipped_no_negatives = drawn.skipped_no_negatives;
            reference = drawn.samples.clone();
        }
        let samples = drawn.samples;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut named_stream(config.seed, "shuffle", epoch as u64));

        let mut running = 0.0;
        let mut batch = Vec::with_capacity(config.batch_size);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let (loss, grad) = params.gradients(&batch, config.max_history);
            if !loss.is_finite() {
                return Err(ModelError::DivergenceDetected { epoch });
            }
            running += loss;
            if config.learning_rate > 0.0 {
                params.apply(&grad, config.learning_rate);
            }
        }
        if !params.is_finite() {
            return Err(ModelError::DivergenceDetected { epoch });
        }
        let epoch_loss = mean_loss(params, &reference, config.max_history);
        if !epoch_loss.is_finite() {
            return Err(ModelError::DivergenceDetected { epoch });
        }
        report.running_loss.push(running / samples.len() as f64);
        report.epoch_loss.push(epoch_loss);
        report.samples_per_epoch.push(samples.len());
    }
    Ok(report)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: parameters plus the article id of every embedding row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub max_history: usize,
    pub article_ids: Vec<String>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, catalog: &Catalog, max_history: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            max_history,
            article_ids: catalog.articles().iter().map(|a| a.article_id.clone()).collect(),
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let p = &ck.params;
        if p.dim == 0
            || p.embeddings.len() != ck.article_ids.len() * p.dim
            || p.attn_w.len() != p.dim * p.dim
            || p.attn_q.len() != p.dim
        {
            return Err(ModelError::Checkpoint("parameter shapes do not match".into()));
        }
        Ok(ck)
    }

    /// Parameters with embedding rows reordered to `catalog`. Articles the
    /// checkpoint does not know get zero embeddings.
    pub fn params_for(&self, catalog: &Catalog) -> ModelParams {
        let d = self.params.dim;
        let rows: HashMap<&str, usize> = self.article_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut out = ModelParams::new(d, catalog.len());
        out.attn_w.clone_from(&self.params.attn_w);
        out.attn_q.clone_from(&self.params.attn_q);
        for idx in catalog.indices() {
            if let Some(&r) = rows.get(catalog.id(idx)) {
                out.embedding_mut(idx)
                    .copy_from_slice(&self.params.embeddings[r * d..(r + 1) * d]);
            }
        }
        out
    }
}
