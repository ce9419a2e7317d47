//! Desk-scale uncertainty-aware reward model.
//!
//! Architecture: supplied features -> linear(hidden) -> tanh -> dropout ->
//! linear head producing a scalar reward. Dropout uses inverted scaling
//! (kept units are multiplied by `1 / (1 - rate)`), so the deterministic pass
//! equals the expectation over masks of the head's input.
//!
//! Training minimizes the pairwise negative log-likelihood
//! `-mean log sigmoid(r(chosen) - r(rejected))` with plain minibatch SGD.
//! At inference, repeated passes with fresh dropout masks give the MC reward
//! draws consumed by [`crate::uncertainty`].

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::logitnormal::{sigmoid, softplus};
use crate::model::{PreferencePair, SourceClass};
use crate::seeding;

pub const CHECKPOINT_FORMAT: &str = "urm-proxy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Extra keys attached to synthetic records.
pub const FEATURES_CHOSEN_KEY: &str = "features_chosen";
pub const FEATURES_REJECTED_KEY: &str = "features_rejected";
pub const TRUE_GAP_KEY: &str = "true_gap";
pub const FLIPPED_KEY: &str = "flipped";

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("feature dimension {got} does not match model input dimension {expected}")]
    Shape { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record {0:?} lacks feature vectors")]
    MissingFeatures(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    /// `[w1 (hidden x input, row-major) | b1 (hidden) | w2 (hidden) | b2]`
    pub params: Vec<f64>,
}

fn param_len(input_dim: usize, hidden_dim: usize) -> usize {
    hidden_dim * input_dim + 2 * hidden_dim + 1
}

impl ProxyModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self, ProxyError> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(ProxyError::InvalidModel("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ProxyError::InvalidModel(format!(
                "dropout rate {dropout_rate} not in [0, 1)"
            )));
        }
        let mut rng = seeding::rng(seed);
        let mut params = vec![0.0; param_len(input_dim, hidden_dim)];
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let a2 = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let w1_len = hidden_dim * input_dim;
        for w in &mut params[..w1_len] {
            *w = rng.random_range(-a1..a1);
        }
        let w2_start = w1_len + hidden_dim;
        for w in &mut params[w2_start..w2_start + hidden_dim] {
            *w = rng.random_range(-a2..a2);
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            dropout_rate,
            params,
        })
    }

    pub fn validate(&self) -> Result<(), ProxyError> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(ProxyError::InvalidModel("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ProxyError::InvalidModel("dropout rate not in [0, 1)".into()));
        }
        let want = param_len(self.input_dim, self.hidden_dim);
        if self.params.len() != want {
            return Err(ProxyError::InvalidModel(format!(
                "expected {want} parameters, found {}",
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(ProxyError::InvalidModel("non-finite parameter".into()));
        }
        Ok(())
    }

    fn w1(&self) -> &[f64] {
        &self.params[..self.hidden_dim * self.input_dim]
    }
    fn b1(&self) -> &[f64] {
        let s = self.hidden_dim * self.input_dim;
        &self.params[s..s + self.hidden_dim]
    }
    fn w2(&self) -> &[f64] {
        let s = self.hidden_dim * self.input_dim + self.hidden_dim;
        &self.params[s..s + self.hidden_dim]
    }
    fn b2_index(&self) -> usize {
        self.params.len() - 1
    }

    /// Adds `delta` to the head bias. Rewards shift by exactly `delta`.
    pub fn shift_head_bias(&mut self, delta: f64) {
        let i = self.b2_index();
        self.params[i] += delta;
    }

    /// Zeroes the regression head, making every reward 0.
    pub fn zero_head(&mut self) {
        let s = self.hidden_dim * self.input_dim + self.hidden_dim;
        for p in &mut self.params[s..] {
            *p = 0.0;
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ProxyError> {
        if x.len() == self.input_dim {
            Ok(())
        } else {
            Err(ProxyError::Shape {
                expected: self.input_dim,
                got: x.len(),
            })
        }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let (w1, b1) = (self.w1(), self.b1());
        (0..self.hidden_dim)
            .map(|j| {
                let row = &w1[j * self.input_dim..(j + 1) * self.input_dim];
                let a: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[j];
                a.tanh()
            })
            .collect()
    }

    fn head(&self, h: &[f64], mask: Option<&[f64]>) -> f64 {
        let w2 = self.w2();
        let b2 = self.params[self.b2_index()];
        match mask {
            Some(m) => h.iter().zip(w2).zip(m).map(|((h, w), m)| h * m * w).sum::<f64>() + b2,
            None => h.iter().zip(w2).map(|(h, w)| h * w).sum::<f64>() + b2,
        }
    }

    /// Deterministic reward (dropout off).
    pub fn reward(&self, x: &[f64]) -> Result<f64, ProxyError> {
        self.check_dim(x)?;
        Ok(self.head(&self.hidden(x), None))
    }

    fn draw_mask(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.dropout_rate);
        (0..self.hidden_dim)
            .map(|_| {
                if rng.random::<f64>() < self.dropout_rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }

    /// `k_passes` stochastic forward passes with dropout active.
    pub fn mc_rewards(&self, x: &[f64], k_passes: usize, seed: u64) -> Result<Vec<f64>, ProxyError> {
        self.check_dim(x)?;
        if k_passes == 0 {
            return Err(ProxyError::InvalidConfig("k_passes must be >= 1".into()));
        }
        let h = self.hidden(x);
        let mut rng = seeding::rng(seed);
        Ok((0..k_passes)
            .map(|_| {
                let mask = self.draw_mask(&mut rng);
                self.head(&h, Some(&mask))
            })
            .collect())
    }

    /// Accumulates `scale * d r(x) / d params` into `grad`.
    fn backward(&self, x: &[f64], mask: Option<&[f64]>, scale: f64, grad: &mut [f64]) {
        let h = self.hidden(x);
        let (ni, nh) = (self.input_dim, self.hidden_dim);
        let w2 = self.w2();
        let b1_start = nh * ni;
        let w2_start = b1_start + nh;
        for j in 0..nh {
            let m = mask.map_or(1.0, |m| m[j]);
            grad[w2_start + j] += scale * h[j] * m;
            let da = scale * w2[j] * m * (1.0 - h[j] * h[j]);
            if da != 0.0 {
                grad[b1_start + j] += da;
                for (g, xi) in grad[j * ni..(j + 1) * ni].iter_mut().zip(x) {
                    *g += da * xi;
                }
            }
        }
        let last = grad.len() - 1;
        grad[last] += scale;
    }
}

/// A training pair of feature vectors; `chosen` is the labelled winner.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
}

/// Dropout masks for one pair (chosen, rejected).
pub type PairMasks = (Vec<f64>, Vec<f64>);

/// Pairwise NLL over a batch and its gradient. `masks = None` runs the
/// deterministic network.
pub fn urm_loss_and_grad(
    model: &ProxyModel,
    batch: &[FeaturePair],
    masks: Option<&[PairMasks]>,
) -> Result<(f64, Vec<f64>), ProxyError> {
    if batch.is_empty() {
        return Err(ProxyError::EmptyDataset);
    }
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for (i, pair) in batch.iter().enumerate() {
        model.check_dim(&pair.chosen)?;
        model.check_dim(&pair.rejected)?;
        let (mc, mr) = match masks {
            Some(m) => (Some(m[i].0.as_slice()), Some(m[i].1.as_slice())),
            None => (None, None),
        };
        let rc = model.head(&model.hidden(&pair.chosen), mc);
        let rr = model.head(&model.hidden(&pair.rejected), mr);
        let d = rc - rr;
        loss += softplus(-d);
        // d/dd softplus(-d) = -sigmoid(-d)
        let g = -sigmoid(-d) / n;
        model.backward(&pair.chosen, mc, g, &mut grad);
        model.backward(&pair.rejected, mr, -g, &mut grad);
    }
    Ok((loss / n, grad))
}

pub fn urm_loss(model: &ProxyModel, batch: &[FeaturePair]) -> Result<f64, ProxyError> {
    Ok(urm_loss_and_grad(model, batch, None)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrmHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for UrmHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedProxy {
    pub model: ProxyModel,
    /// Mean minibatch loss per epoch (dropout active).
    pub epoch_losses: Vec<f64>,
}

pub fn train_urm(
    data: &[FeaturePair],
    mut model: ProxyModel,
    hyper: &UrmHyper,
) -> Result<TrainedProxy, ProxyError> {
    model.validate()?;
    if data.is_empty() {
        return Err(ProxyError::EmptyDataset);
    }
    if hyper.batch_size == 0 || !(hyper.learning_rate >= 0.0) {
        return Err(ProxyError::InvalidConfig(
            "batch_size must be >= 1 and learning_rate >= 0".into(),
        ));
    }
    for p in data {
        model.check_dim(&p.chosen)?;
        model.check_dim(&p.rejected)?;
    }
    let mut rng = seeding::rng(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut batch = Vec::with_capacity(hyper.batch_size);
    let mut masks = Vec::with_capacity(hyper.batch_size);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            masks.clear();
            for &i in chunk {
                batch.push(data[i].clone());
                masks.push((model.draw_mask(&mut rng), model.draw_mask(&mut rng)));
            }
            let (loss, grad) = urm_loss_and_grad(&model, &batch, Some(&masks))?;
            total += loss * chunk.len() as f64;
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= hyper.learning_rate * g;
            }
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(TrainedProxy {
        model,
        epoch_losses,
    })
}

/// Fraction of pairs where the deterministic reward of `chosen` strictly
/// exceeds that of `rejected`. Ties count as wrong.
pub fn preference_accuracy(model: &ProxyModel, data: &[FeaturePair]) -> Result<f64, ProxyError> {
    if data.is_empty() {
        return Err(ProxyError::EmptyDataset);
    }
    let mut correct = 0usize;
    for p in data {
        if model.reward(&p.chosen)? > model.reward(&p.rejected)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Largest relative error between the analytic gradient of the pairwise
/// loss and central differences, with dropout masks held fixed.
pub fn urm_grad_check(
    model: &ProxyModel,
    batch: &[FeaturePair],
    masks: Option<&[PairMasks]>,
    step: f64,
) -> Result<f64, ProxyError> {
    let (_, analytic) = urm_loss_and_grad(model, batch, masks)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let up = urm_loss_and_grad(&probe, batch, masks)?.0;
        probe.params[i] = orig - step;
        let down = urm_loss_and_grad(&probe, batch, masks)?.0;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(crate::objectives::relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: ProxyModel,
}

pub fn save_checkpoint<W: Write>(model: &ProxyModel, sink: W) -> Result<(), ProxyError> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    serde_json::to_writer(sink, &ck).map_err(|e| ProxyError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint<R: Read>(source: R) -> Result<ProxyModel, ProxyError> {
    let ck: Checkpoint =
        serde_json::from_reader(source).map_err(|e| ProxyError::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(ProxyError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    ck.model.validate()?;
    Ok(ck.model)
}

/// Synthetic preference data.
///
/// Each prompt owns `responses_per_prompt` responses with latent qualities
/// spaced at least `quality_margin` apart. A response's features are its
/// quality along a fixed unit direction plus isotropic Gaussian noise of
/// scale `noise_sigma`, drawn once per response. Pairs sample a prompt and two
/// distinct responses; the better one is labelled chosen, except with
/// probability `flip_rate` where the labels are swapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub feature_dim: usize,
    pub quality_margin: f64,
    pub noise_sigma: f64,
    pub flip_rate: f64,
    pub seed: u64,
    pub n_prompts: usize,
    pub responses_per_prompt: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            feature_dim: 16,
            quality_margin: 1.0,
            noise_sigma: 0.25,
            flip_rate: 0.0,
            seed: 42,
            n_prompts: 100,
            responses_per_prompt: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ProxyError> {
        let bad = |m: &str| Err(ProxyError::InvalidConfig(m.into()));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(self.quality_margin > 0.0 && self.quality_margin.is_finite()) {
            return bad("quality_margin must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if !(0.0..=0.5).contains(&self.flip_rate) {
            return bad("flip_rate must be in [0, 0.5]");
        }
        if self.n_prompts == 0 || self.responses_per_prompt < 2 {
            return bad("need at least one prompt with two responses");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub pair: PreferencePair,
    pub features_chosen: Vec<f64>,
    pub features_rejected: Vec<f64>,
    /// Latent quality of the labelled chosen minus labelled rejected response.
    pub true_gap: f64,
    pub flipped: bool,
}

impl SynthPair {
    pub fn feature_pair(&self) -> FeaturePair {
        FeaturePair {
            chosen: self.features_chosen.clone(),
            rejected: self.features_rejected.clone(),
        }
    }

    /// The record with features and ground truth stored as extra keys.
    pub fn to_record(&self) -> PreferencePair {
        let mut pair = self.pair.clone();
        pair.extra
            .insert(FEATURES_CHOSEN_KEY.into(), serde_json::json!(self.features_chosen));
        if !self.features_rejected.is_empty() {
            pair.extra.insert(
                FEATURES_REJECTED_KEY.into(),
                serde_json::json!(self.features_rejected),
            );
        }
        pair.extra
            .insert(TRUE_GAP_KEY.into(), serde_json::json!(self.true_gap));
        pair.extra.insert(FLIPPED_KEY.into(), Value::Bool(self.flipped));
        pair
    }
}

fn vec_from_extra(pair: &PreferencePair, key: &str) -> Option<Vec<f64>> {
    pair.extra
        .get(key)?
        .as_array()?
        .iter()
        .map(Value::as_f64)
        .collect()
}

/// Chosen and rejected feature vectors stored on a record.
pub fn record_features(pair: &PreferencePair) -> Result<(Vec<f64>, Option<Vec<f64>>), ProxyError> {
    let chosen = vec_from_extra(pair, FEATURES_CHOSEN_KEY)
        .ok_or_else(|| ProxyError::MissingFeatures(pair.id.clone()))?;
    Ok((chosen, vec_from_extra(pair, FEATURES_REJECTED_KEY)))
}

/// Ground-truth gap stored on a synthetic record, if any.
pub fn record_true_gap(pair: &PreferencePair) -> Option<f64> {
    pair.extra.get(TRUE_GAP_KEY)?.as_f64()
}

struct Universe {
    direction: Vec<f64>,
    /// per prompt, per response: (quality, features)
    responses: Vec<Vec<(f64, Vec<f64>)>>,
}

fn build_universe(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Universe {
    let d = config.feature_dim;
    let mut direction: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        direction.iter_mut().for_each(|x| *x /= norm);
    } else {
        direction[0] = 1.0;
    }
    let r = config.responses_per_prompt;
    let responses = (0..config.n_prompts)
        .map(|_| {
            let mut q = Vec::with_capacity(r);
            let mut acc = 0.0;
            for _ in 0..r {
                q.push(acc);
                let extra: f64 = Exp1.sample(rng);
                acc += config.quality_margin * (1.0 + 0.5 * extra);
            }
            let mean = q.iter().sum::<f64>() / r as f64;
            q.iter_mut().for_each(|x| *x -= mean);
            q.shuffle(rng);
            q.into_iter()
                .map(|quality| {
                    let feats = direction
                        .iter()
                        .map(|&di| {
                            let e: f64 = StandardNormal.sample(rng);
                            quality * di + config.noise_sigma * e
                        })
                        .collect();
                    (quality, feats)
                })
                .collect()
        })
        .collect();
    Universe {
        direction,
        responses,
    }
}

fn prompt_name(p: usize) -> String {
    format!("prompt-{p:04}")
}

fn response_name(p: usize, r: usize) -> String {
    format!("prompt-{p:04}/response-{r:02}")
}

/// Preference pairs over a shared pool of responses.
pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<SynthPair>, ProxyError> {
    config.validate()?;
    let mut rng = seeding::rng(config.seed);
    let uni = build_universe(config, &mut rng);
    let r = config.responses_per_prompt;
    let mut out = Vec::with_capacity(config.n_pairs);
    for i in 0..config.n_pairs {
        let p = rng.random_range(0..config.n_prompts);
        let a = rng.random_range(0..r);
        let mut b = rng.random_range(0..r - 1);
        if b >= a {
            b += 1;
        }
        let (mut hi, mut lo) = if uni.responses[p][a].0 > uni.responses[p][b].0 {
            (a, b)
        } else {
            (b, a)
        };
        let flipped = rng.random::<f64>() < config.flip_rate;
        if flipped {
            std::mem::swap(&mut hi, &mut lo);
        }
        let (qc, fc) = &uni.responses[p][hi];
        let (qr, fr) = &uni.responses[p][lo];
        let mut pair = PreferencePair::new(format!("pair-{i:06}"), Vec::new(), None);
        pair.instruction = Some(prompt_name(p));
        pair.chosen_text = Some(response_name(p, hi));
        pair.rejected_text = Some(response_name(p, lo));
        out.push(SynthPair {
            pair,
            features_chosen: fc.clone(),
            features_rejected: fr.clone(),
            true_gap: qc - qr,
            flipped,
        });
    }
    debug_assert!(uni.direction.len() == config.feature_dim);
    Ok(out)
}

/// Single-response records over the same kind of response pool. A response
/// is labelled `expert` when its quality is above its prompt's mean and
/// `suboptimal` otherwise; `flip_rate` swaps the label. `true_gap` holds the
/// response quality.
pub fn gen_synthetic_sft(config: &SynthConfig) -> Result<Vec<SynthPair>, ProxyError> {
    config.validate()?;
    let mut rng = seeding::rng(config.seed);
    let uni = build_universe(config, &mut rng);
    let r = config.responses_per_prompt;
    let mut out = Vec::with_capacity(config.n_pairs);
    for i in 0..config.n_pairs {
        let p = rng.random_range(0..config.n_prompts);
        let a = rng.random_range(0..r);
        let (q, f) = &uni.responses[p][a];
        let flipped = rng.random::<f64>() < config.flip_rate;
        let expert = (*q > 0.0) != flipped;
        let mut pair = PreferencePair::new(format!("sft-{i:06}"), Vec::new(), None);
        pair.instruction = Some(prompt_name(p));
        pair.chosen_text = Some(response_name(p, a));
        pair.source_class = if expert {
            SourceClass::Expert
        } else {
            SourceClass::Suboptimal
        };
        out.push(SynthPair {
            pair,
            features_chosen: f.clone(),
            features_rejected: Vec::new(),
            true_gap: *q,
            flipped,
        });
    }
    Ok(out)
}

/// Fills reward samples for every record from MC passes of `model`.
/// Streams are keyed by `(seed, record id)`; the rejected side uses the id
/// suffixed with `#rejected`.
pub fn score_records(
    model: &ProxyModel,
    records: &mut [PreferencePair],
    k_passes: usize,
    seed: u64,
) -> Result<(), ProxyError> {
    use rayon::prelude::*;
    records.par_iter_mut().try_for_each(|pair| {
        let (fc, fr) = record_features(pair)?;
        pair.reward_samples_chosen =
            model.mc_rewards(&fc, k_passes, seeding::record_seed(seed, &pair.id))?;
        if let Some(fr) = fr {
            let key = format!("{}#rejected", pair.id);
            pair.reward_samples_rejected =
                Some(model.mc_rewards(&fr, k_passes, seeding::record_seed(seed, &key))?);
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch(n: usize, dim: usize, seed: u64) -> Vec<FeaturePair> {
        let mut rng = seeding::rng(seed);
        (0..n)
            .map(|_| FeaturePair {
                chosen: (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
                rejected: (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            })
            .collect()
    }

    #[test]
    fn zeroed_head_gives_log2_loss() {
        let mut m = ProxyModel::new(4, 8, 0.1, 1).unwrap();
        m.zero_head();
        let loss = urm_loss(&m, &toy_batch(10, 4, 2)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = ProxyModel::new(5, 7, 0.2, 3).unwrap();
        let batch = toy_batch(10, 5, 4);
        let mut rng = seeding::rng(5);
        let masks: Vec<PairMasks> = (0..batch.len())
            .map(|_| (m.draw_mask(&mut rng), m.draw_mask(&mut rng)))
            .collect();
        let err = urm_grad_check(&m, &batch, Some(&masks), 1e-5).unwrap();
        assert!(err <= 1e-5, "max relative error {err}");
        let err = urm_grad_check(&m, &batch, None, 1e-5).unwrap();
        assert!(err <= 1e-5, "max relative error {err}");
    }

    #[test]
    fn loss_is_translation_invariant() {
        let m = ProxyModel::new(4, 6, 0.1, 7).unwrap();
        let batch = toy_batch(12, 4, 8);
        let mut shifted = m.clone();
        shifted.shift_head_bias(3.7);
        let a = urm_loss(&m, &batch).unwrap();
        let b = urm_loss(&shifted, &batch).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn zero_dropout_passes_are_identical() {
        let m = ProxyModel::new(3, 5, 0.0, 1).unwrap();
        let x = [0.3, -1.0, 2.0];
        let draws = m.mc_rewards(&x, 8, 11).unwrap();
        let det = m.reward(&x).unwrap();
        assert_eq!(draws.len(), 8);
        assert!(draws.iter().all(|&d| d == det));
    }

    #[test]
    fn mc_rewards_are_seeded() {
        let m = ProxyModel::new(3, 16, 0.3, 1).unwrap();
        let x = [0.3, -1.0, 2.0];
        assert_eq!(m.mc_rewards(&x, 16, 5).unwrap(), m.mc_rewards(&x, 16, 5).unwrap());
        assert_ne!(m.mc_rewards(&x, 16, 5).unwrap(), m.mc_rewards(&x, 16, 6).unwrap());
    }

    #[test]
    fn shape_errors() {
        let m = ProxyModel::new(3, 4, 0.1, 1).unwrap();
        assert!(matches!(
            m.mc_rewards(&[1.0, 2.0], 4, 0),
            Err(ProxyError::Shape { expected: 3, got: 2 })
        ));
        let bad = vec![FeaturePair {
            chosen: vec![0.0; 2],
            rejected: vec![0.0; 3],
        }];
        assert!(matches!(
            train_urm(&bad, m, &UrmHyper::default()),
            Err(ProxyError::Shape { .. })
        ));
    }

    #[test]
    fn accuracy_tie_rule_and_empty() {
        let mut m = ProxyModel::new(2, 3, 0.0, 1).unwrap();
        m.zero_head();
        let data = toy_batch(5, 2, 1);
        assert_eq!(preference_accuracy(&m, &data).unwrap(), 0.0);
        assert!(matches!(
            preference_accuracy(&m, &[]),
            Err(ProxyError::EmptyDataset)
        ));
    }

    #[test]
    fn perfect_margin_model_scores_one() {
        // single hidden unit reading the first feature
        let mut m = ProxyModel::new(2, 1, 0.0, 1).unwrap();
        m.params = vec![1.0, 0.0, 0.0, 1.0, 0.0];
        let data = vec![
            FeaturePair {
                chosen: vec![0.5, 9.0],
                rejected: vec![-0.5, -9.0],
            },
            FeaturePair {
                chosen: vec![0.2, 0.0],
                rejected: vec![0.1, 0.0],
            },
        ];
        assert_eq!(preference_accuracy(&m, &data).unwrap(), 1.0);
    }

    #[test]
    fn synthetic_generation() {
        let mut cfg = SynthConfig {
            n_pairs: 0,
            ..SynthConfig::default()
        };
        assert!(gen_synthetic(&cfg).unwrap().is_empty());
        cfg.n_pairs = 1000;
        let a = gen_synthetic(&cfg).unwrap();
        assert_eq!(a, gen_synthetic(&cfg).unwrap());
        assert!(a.iter().all(|p| p.true_gap >= cfg.quality_margin && !p.flipped));
        cfg.flip_rate = 0.3;
        let b = gen_synthetic(&cfg).unwrap();
        let flips = b.iter().filter(|p| p.flipped).count();
        assert!(flips > 200 && flips < 400, "{flips}");
        assert!(b.iter().all(|p| (p.true_gap < 0.0) == p.flipped));
        cfg.flip_rate = 0.6;
        assert!(gen_synthetic(&cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let m = ProxyModel::new(3, 4, 0.1, 9).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(load_checkpoint(buf.as_slice()).unwrap(), m);
        let mut v: Value = serde_json::from_slice(&buf).unwrap();
        v["params"].as_array_mut().unwrap().pop();
        let truncated = serde_json::to_vec(&v).unwrap();
        assert!(matches!(
            load_checkpoint(truncated.as_slice()),
            Err(ProxyError::InvalidModel(_))
        ));
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = SynthConfig {
            n_pairs: 200,
            feature_dim: 6,
            ..SynthConfig::default()
        };
        let data: Vec<FeaturePair> = gen_synthetic(&cfg)
            .unwrap()
            .iter()
            .map(SynthPair::feature_pair)
            .collect();
        let hyper = UrmHyper {
            epochs: 3,
            ..UrmHyper::default()
        };
        let m = ProxyModel::new(6, 16, 0.1, 1).unwrap();
        let a = train_urm(&data, m.clone(), &hyper).unwrap();
        let b = train_urm(&data, m, &hyper).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert!(a.epoch_losses.last().unwrap() <= a.epoch_losses.first().unwrap());
    }
}
