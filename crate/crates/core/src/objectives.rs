//! DPO, UDPO, C-RLFT and UCPO losses with analytic gradients, plus a tabular
//! softmax policy used to exercise them end to end.
//!
//! The loss functions consume log-probabilities only, so any policy can feed
//! them. Batch reduction is always the arithmetic mean, and the weighted
//! variants share their per-record arithmetic with the unweighted ones:
//! `udpo(c_u = 1) == dpo` and `ucpo(gamma = 0) == crlft` hold bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::UcpoConfig;
use crate::logitnormal::{sigmoid, softplus};
use crate::model::{PreferencePair, SourceClass};
use crate::seeding;

/// Denominator floor for [`relative_error`].
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub const CHECKPOINT_FORMAT: &str = "urm-toy-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("non-finite input at batch index {0}")]
    InvalidInput(usize),
    #[error("invalid weight {value} at batch index {index}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch has {batch} entries but {weights} weights")]
    LengthMismatch { batch: usize, weights: usize },
    #[error("policy has no entry for {0}")]
    MissingEntry(String),
    #[error("objective {objective} cannot train on {data} data")]
    WrongData { objective: Objective, data: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UdpoConfig {
    /// Implicit-reward temperature.
    pub beta: f64,
}

impl Default for UdpoConfig {
    fn default() -> Self {
        Self { beta: 0.1 }
    }
}

/// Log-probabilities of one preference pair under the policy and the frozen
/// reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLogProbs {
    pub theta_c: f64,
    pub theta_r: f64,
    pub ref_c: f64,
    pub ref_r: f64,
}

impl PairLogProbs {
    /// `(theta_c - ref_c) - (theta_r - ref_r)`, before scaling by beta.
    pub fn log_ratio_gap(&self) -> f64 {
        (self.theta_c - self.ref_c) - (self.theta_r - self.ref_r)
    }

    fn is_finite(&self) -> bool {
        [self.theta_c, self.theta_r, self.ref_c, self.ref_r]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// One single-response record for the class-conditioned objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleLogProb {
    pub logp: f64,
    pub class_reward: f64,
}

fn check_weights(n: usize, weights: &[f64]) -> Result<(), ObjectiveError> {
    if weights.len() != n {
        return Err(ObjectiveError::LengthMismatch {
            batch: n,
            weights: weights.len(),
        });
    }
    Ok(())
}

/// Mean of `c_i * -log sigmoid(beta * gap_i)` and its derivative with respect
/// to each pair's `theta_c` (the derivative for `theta_r` is the negation).
fn weighted_pairs(
    batch: &[PairLogProbs],
    weights: Option<&[f64]>,
    beta: f64,
) -> Result<(f64, Vec<f64>), ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(ObjectiveError::InvalidConfig(format!("beta must be >= 0, got {beta}")));
    }
    if let Some(w) = weights {
        check_weights(batch.len(), w)?;
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (i, lp) in batch.iter().enumerate() {
        if !lp.is_finite() {
            return Err(ObjectiveError::InvalidInput(i));
        }
        let c = weights.map_or(1.0, |w| w[i]);
        if !(c >= 0.0 && c.is_finite()) {
            return Err(ObjectiveError::InvalidWeight { index: i, value: c });
        }
        let x = beta * lp.log_ratio_gap();
        total += c * softplus(-x);
        grads.push(-c * beta * sigmoid(-x) / n);
    }
    Ok((total / n, grads))
}

/// Mean of `-w_i * logp_i` and its derivative with respect to each `logp_i`.
fn weighted_singles(batch: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>), ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    check_weights(batch.len(), weights)?;
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (i, (&lp, &w)) in batch.iter().zip(weights).enumerate() {
        if !lp.is_finite() {
            return Err(ObjectiveError::InvalidInput(i));
        }
        if !w.is_finite() {
            return Err(ObjectiveError::InvalidWeight { index: i, value: w });
        }
        total += -(w * lp);
        grads.push(-w / n);
    }
    Ok((total / n, grads))
}

pub fn dpo_loss(batch: &[PairLogProbs], config: &UdpoConfig) -> Result<f64, ObjectiveError> {
    Ok(weighted_pairs(batch, None, config.beta)?.0)
}

pub fn udpo_loss(
    batch: &[PairLogProbs],
    c_u: &[f64],
    config: &UdpoConfig,
) -> Result<f64, ObjectiveError> {
    Ok(weighted_pairs(batch, Some(c_u), config.beta)?.0)
}

/// Per-pair derivatives `(d/d theta_c, d/d theta_r)` of the UDPO batch loss.
pub fn udpo_grad(
    batch: &[PairLogProbs],
    c_u: Option<&[f64]>,
    config: &UdpoConfig,
) -> Result<Vec<(f64, f64)>, ObjectiveError> {
    let (_, g) = weighted_pairs(batch, c_u, config.beta)?;
    Ok(g.into_iter().map(|d| (d, -d)).collect())
}

fn class_weights(batch: &[SingleLogProb]) -> Vec<f64> {
    batch.iter().map(|s| s.class_reward).collect()
}

fn ucpo_class_weights(
    batch: &[SingleLogProb],
    u_tilde: &[f64],
    config: &UcpoConfig,
) -> Result<Vec<f64>, ObjectiveError> {
    check_weights(batch.len(), u_tilde)?;
    batch
        .iter()
        .zip(u_tilde)
        .enumerate()
        .map(|(i, (s, &ut))| {
            if (0.0..=1.0).contains(&ut) {
                Ok(s.class_reward + config.gamma * (1.0 - ut))
            } else {
                Err(ObjectiveError::InvalidWeight { index: i, value: ut })
            }
        })
        .collect()
}

fn logps(batch: &[SingleLogProb]) -> Vec<f64> {
    batch.iter().map(|s| s.logp).collect()
}

pub fn crlft_loss(batch: &[SingleLogProb]) -> Result<f64, ObjectiveError> {
    Ok(weighted_singles(&logps(batch), &class_weights(batch))?.0)
}

pub fn ucpo_loss(
    batch: &[SingleLogProb],
    u_tilde: &[f64],
    config: &UcpoConfig,
) -> Result<f64, ObjectiveError> {
    let w = ucpo_class_weights(batch, u_tilde, config)?;
    Ok(weighted_singles(&logps(batch), &w)?.0)
}

/// Derivatives of the UCPO batch loss with respect to each `logp`.
/// `u_tilde = None` gives the C-RLFT gradient.
pub fn ucpo_grad(
    batch: &[SingleLogProb],
    u_tilde: Option<&[f64]>,
    config: &UcpoConfig,
) -> Result<Vec<f64>, ObjectiveError> {
    let w = match u_tilde {
        Some(ut) => ucpo_class_weights(batch, ut, config)?,
        None => class_weights(batch),
    };
    Ok(weighted_singles(&logps(batch), &w)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Dpo,
    Udpo,
    Crlft,
    Ucpo,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Dpo, Objective::Udpo, Objective::Crlft, Objective::Ucpo];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Dpo => "dpo",
            Objective::Udpo => "udpo",
            Objective::Crlft => "crlft",
            Objective::Ucpo => "ucpo",
        }
    }

    pub fn uses_pairs(self) -> bool {
        matches!(self, Objective::Dpo | Objective::Udpo)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = ObjectiveError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| ObjectiveError::InvalidConfig(format!("unknown objective {s:?}")))
    }
}

/// Objective plus its hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub objective: Objective,
    pub udpo: UdpoConfig,
    pub ucpo: UcpoConfig,
}

impl ObjectiveSpec {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            udpo: UdpoConfig::default(),
            ucpo: UcpoConfig::default(),
        }
    }
}

/// A preference pair addressed by prompt and response ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    /// UDPO coefficient; ignored by plain DPO.
    pub c_u: f64,
}

/// A single labelled response.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySingle {
    pub prompt: String,
    pub class: SourceClass,
    pub response: String,
    pub class_reward: f64,
    /// Min-max normalised `u`; ignored by plain C-RLFT.
    pub u_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainingData {
    Pairs(Vec<PolicyPair>),
    Singles(Vec<PolicySingle>),
}

impl TrainingData {
    pub fn len(&self) -> usize {
        match self {
            TrainingData::Pairs(v) => v.len(),
            TrainingData::Singles(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn kind(&self) -> &'static str {
        match self {
            TrainingData::Pairs(_) => "pair",
            TrainingData::Singles(_) => "single-response",
        }
    }
}

fn text_or_missing(t: &Option<String>, id: &str, what: &str) -> Result<String, ObjectiveError> {
    t.clone()
        .ok_or_else(|| ObjectiveError::MissingEntry(format!("{what} of record {id:?}")))
}

/// Pair examples from records using `instruction`, `chosen_text` and
/// `rejected_text` as ids. `c_u` defaults to 1.
pub fn pair_examples(
    records: &[PreferencePair],
    c_u: Option<&[f64]>,
) -> Result<Vec<PolicyPair>, ObjectiveError> {
    if let Some(w) = c_u {
        check_weights(records.len(), w)?;
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(PolicyPair {
                prompt: text_or_missing(&r.instruction, &r.id, "instruction")?,
                chosen: text_or_missing(&r.chosen_text, &r.id, "chosen_text")?,
                rejected: text_or_missing(&r.rejected_text, &r.id, "rejected_text")?,
                c_u: c_u.map_or(1.0, |w| w[i]),
            })
        })
        .collect()
}

/// Single-response examples. `u_tilde` defaults to 0.5.
pub fn single_examples(
    records: &[PreferencePair],
    u_tilde: Option<&[f64]>,
    config: &UcpoConfig,
) -> Result<Vec<PolicySingle>, ObjectiveError> {
    if let Some(w) = u_tilde {
        check_weights(records.len(), w)?;
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let class_reward = config
                .class_reward(r.source_class)
                .ok_or_else(|| ObjectiveError::MissingEntry(format!("source_class of record {:?}", r.id)))?;
            Ok(PolicySingle {
                prompt: text_or_missing(&r.instruction, &r.id, "instruction")?,
                class: r.source_class,
                response: text_or_missing(&r.chosen_text, &r.id, "chosen_text")?,
                class_reward,
                u_tilde: u_tilde.map_or(0.5, |w| w[i]),
            })
        })
        .collect()
}

/// Softmax over the responses of one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub prompt: String,
    /// `unlabeled` for the shared context of an unconditioned policy.
    pub class: SourceClass,
    pub responses: Vec<String>,
    pub offset: usize,
}

/// Tabular policy: one logits row per context (prompt, or prompt and class)
/// and a frozen reference table of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub contexts: Vec<PolicyContext>,
    pub theta: Vec<f64>,
    ref_logits: Vec<f64>,
    #[serde(skip)]
    index: BTreeMap<(String, SourceClass), usize>,
}

impl ToyPolicy {
    /// Builds contexts from `(prompt, class, response set)` triples with
    /// uniform logits.
    pub fn uniform(table: BTreeMap<(String, SourceClass), BTreeSet<String>>) -> Result<Self, ObjectiveError> {
        let mut contexts = Vec::with_capacity(table.len());
        let mut offset = 0;
        for ((prompt, class), responses) in table {
            if responses.is_empty() {
                return Err(ObjectiveError::InvalidConfig(format!("prompt {prompt:?} has no responses")));
            }
            let responses: Vec<String> = responses.into_iter().collect();
            let len = responses.len();
            contexts.push(PolicyContext {
                prompt,
                class,
                responses,
                offset,
            });
            offset += len;
        }
        let mut p = Self {
            contexts,
            theta: vec![0.0; offset],
            ref_logits: vec![0.0; offset],
            index: BTreeMap::new(),
        };
        p.rebuild_index();
        Ok(p)
    }

    /// Covers every prompt and response text in `records`. With
    /// `class_conditioned`, each (prompt, class) seen gets its own context
    /// over all responses of that prompt.
    pub fn from_records(records: &[PreferencePair], class_conditioned: bool) -> Result<Self, ObjectiveError> {
        let mut responses: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut classes: BTreeMap<String, BTreeSet<SourceClass>> = BTreeMap::new();
        for r in records {
            let prompt = text_or_missing(&r.instruction, &r.id, "instruction")?;
            let set = responses.entry(prompt.clone()).or_default();
            set.insert(text_or_missing(&r.chosen_text, &r.id, "chosen_text")?);
            if let Some(t) = &r.rejected_text {
                set.insert(t.clone());
            }
            classes.entry(prompt).or_default().insert(r.source_class);
        }
        let mut table = BTreeMap::new();
        for (prompt, set) in responses {
            if class_conditioned {
                for &class in &classes[&prompt] {
                    table.insert((prompt.clone(), class), set.clone());
                }
            } else {
                table.insert((prompt, SourceClass::Unlabeled), set);
            }
        }
        Self::uniform(table)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .contexts
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.prompt.clone(), c.class), i))
            .collect();
    }

    /// Draws both tables from `N(0, scale^2)`; theta starts equal to the
    /// reference.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = seeding::rng(seed);
        for v in &mut self.ref_logits {
            *v = scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        self.theta.clone_from(&self.ref_logits);
    }

    /// Adds `N(0, scale^2)` noise to theta only.
    pub fn perturb_theta(&mut self, scale: f64, seed: u64) {
        let mut rng = seeding::rng(seed);
        for v in &mut self.theta {
            *v += scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }

    pub fn ref_logits(&self) -> &[f64] {
        &self.ref_logits
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn context(&self, prompt: &str, class: SourceClass) -> Result<usize, ObjectiveError> {
        self.index
            .get(&(prompt.to_owned(), class))
            .copied()
            .ok_or_else(|| ObjectiveError::MissingEntry(format!("prompt {prompt:?} ({class:?})")))
    }

    fn slot(&self, ctx: usize, response: &str) -> Result<usize, ObjectiveError> {
        let c = &self.contexts[ctx];
        c.responses
            .binary_search_by(|r| r.as_str().cmp(response))
            .map(|i| c.offset + i)
            .map_err(|_| ObjectiveError::MissingEntry(format!("response {response:?} of prompt {:?}", c.prompt)))
    }

    fn row(&self, ctx: usize) -> std::ops::Range<usize> {
        let c = &self.contexts[ctx];
        c.offset..c.offset + c.responses.len()
    }

    /// Log-softmax of one row of `table` at absolute index `slot`.
    fn log_prob(table: &[f64], row: std::ops::Range<usize>, slot: usize) -> f64 {
        let xs = &table[row];
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        table[slot] - lse
    }

    /// Probabilities of one context under theta.
    pub fn probs(&self, ctx: usize) -> Vec<f64> {
        let xs = &self.theta[self.row(ctx)];
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    /// `log pi_theta(response | prompt, class)` and the reference value.
    pub fn log_probs(&self, prompt: &str, class: SourceClass, response: &str) -> Result<(f64, f64), ObjectiveError> {
        let ctx = self.context(prompt, class)?;
        let slot = self.slot(ctx, response)?;
        let row = self.row(ctx);
        Ok((
            Self::log_prob(&self.theta, row.clone(), slot),
            Self::log_prob(&self.ref_logits, row, slot),
        ))
    }

    /// `grad[k] += scale * d log pi(slot) / d theta_k` over the slot's row.
    fn add_log_prob_grad(&self, ctx: usize, slot: usize, scale: f64, grad: &mut [f64]) {
        let row = self.row(ctx);
        let probs = self.probs(ctx);
        for (k, p) in row.clone().zip(probs) {
            grad[k] -= scale * p;
        }
        grad[slot] += scale;
    }
}

#[derive(Debug, Clone, Copy)]
struct ResolvedPair {
    c: usize,
    r: usize,
    c_u: f64,
}

#[derive(Debug, Clone, Copy)]
struct ResolvedSingle {
    ctx: usize,
    slot: usize,
    class_reward: f64,
    u_tilde: f64,
}

enum Resolved {
    Pairs(Vec<ResolvedPair>),
    Singles(Vec<ResolvedSingle>),
}

fn resolve(policy: &ToyPolicy, data: &TrainingData, objective: Objective) -> Result<Resolved, ObjectiveError> {
    if objective.uses_pairs() != matches!(data, TrainingData::Pairs(_)) {
        return Err(ObjectiveError::WrongData {
            objective,
            data: data.kind(),
        });
    }
    Ok(match data {
        TrainingData::Pairs(v) => Resolved::Pairs(
            v.iter()
                .map(|p| {
                    let ctx = policy.context(&p.prompt, SourceClass::Unlabeled)?;
                    Ok(ResolvedPair {
                        c: policy.slot(ctx, &p.chosen)?,
                        r: policy.slot(ctx, &p.rejected)?,
                        c_u: p.c_u,
                    })
                })
                .collect::<Result<_, ObjectiveError>>()?,
        ),
        TrainingData::Singles(v) => Resolved::Singles(
            v.iter()
                .map(|s| {
                    let ctx = policy
                        .context(&s.prompt, s.class)
                        .or_else(|_| policy.context(&s.prompt, SourceClass::Unlabeled))?;
                    Ok(ResolvedSingle {
                        ctx,
                        slot: policy.slot(ctx, &s.response)?,
                        class_reward: s.class_reward,
                        u_tilde: s.u_tilde,
                    })
                })
                .collect::<Result<_, ObjectiveError>>()?,
        ),
    })
}

/// Both responses of a pair share one softmax, so its normaliser cancels in
/// the gap. Raw logits give the same loss without the log-sum-exp roundoff,
/// and logits of responses outside the pair get an exactly zero gradient.
fn pair_logits(policy: &ToyPolicy, p: &ResolvedPair) -> PairLogProbs {
    PairLogProbs {
        theta_c: policy.theta[p.c],
        theta_r: policy.theta[p.r],
        ref_c: policy.ref_logits[p.c],
        ref_r: policy.ref_logits[p.r],
    }
}

fn resolved_loss_and_grad(
    policy: &ToyPolicy,
    data: &Resolved,
    batch: &[usize],
    spec: &ObjectiveSpec,
) -> Result<(f64, Vec<f64>), ObjectiveError> {
    let mut grad = vec![0.0; policy.n_params()];
    let loss = match data {
        Resolved::Pairs(v) => {
            let lps: Vec<PairLogProbs> = batch.iter().map(|&i| pair_logits(policy, &v[i])).collect();
            let weights: Option<Vec<f64>> =
                (spec.objective == Objective::Udpo).then(|| batch.iter().map(|&i| v[i].c_u).collect());
            let (loss, g) = weighted_pairs(&lps, weights.as_deref(), spec.udpo.beta)?;
            for (&i, d) in batch.iter().zip(g) {
                grad[v[i].c] += d;
                grad[v[i].r] -= d;
            }
            loss
        }
        Resolved::Singles(v) => {
            let lps: Vec<f64> = batch
                .iter()
                .map(|&i| ToyPolicy::log_prob(&policy.theta, policy.row(v[i].ctx), v[i].slot))
                .collect();
            let weights: Vec<f64> = if spec.objective == Objective::Ucpo {
                let singles: Vec<SingleLogProb> = batch
                    .iter()
                    .zip(&lps)
                    .map(|(&i, &logp)| SingleLogProb {
                        logp,
                        class_reward: v[i].class_reward,
                    })
                    .collect();
                let ut: Vec<f64> = batch.iter().map(|&i| v[i].u_tilde).collect();
                ucpo_class_weights(&singles, &ut, &spec.ucpo)?
            } else {
                batch.iter().map(|&i| v[i].class_reward).collect()
            };
            let (loss, g) = weighted_singles(&lps, &weights)?;
            for (&i, d) in batch.iter().zip(g) {
                policy.add_log_prob_grad(v[i].ctx, v[i].slot, d, &mut grad);
            }
            loss
        }
    };
    Ok((loss, grad))
}

/// Mean batch loss of `spec.objective` over all of `data` and its gradient
/// with respect to theta.
pub fn policy_loss_and_grad(
    policy: &ToyPolicy,
    data: &TrainingData,
    spec: &ObjectiveSpec,
) -> Result<(f64, Vec<f64>), ObjectiveError> {
    let resolved = resolve(policy, data, spec.objective)?;
    let all: Vec<usize> = (0..data.len()).collect();
    resolved_loss_and_grad(policy, &resolved, &all, spec)
}

/// Largest relative error between the analytic gradient and central
/// differences over every theta entry.
pub fn grad_check(
    spec: &ObjectiveSpec,
    policy: &ToyPolicy,
    data: &TrainingData,
    step: f64,
) -> Result<f64, ObjectiveError> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(ObjectiveError::InvalidConfig(format!("step {step} outside [1e-7, 1e-3]")));
    }
    let resolved = resolve(policy, data, spec.objective)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let (_, analytic) = resolved_loss_and_grad(policy, &resolved, &all, spec)?;
    let mut probe = policy.clone();
    let mut worst: f64 = 0.0;
    for k in 0..policy.n_params() {
        let orig = probe.theta[k];
        probe.theta[k] = orig + step;
        let up = resolved_loss_and_grad(&probe, &resolved, &all, spec)?.0;
        probe.theta[k] = orig - step;
        let down = resolved_loss_and_grad(&probe, &resolved, &all, spec)?.0;
        probe.theta[k] = orig;
        worst = worst.max(relative_error(analytic[k], (up - down) / (2.0 * step)));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Keep the learning rate fixed; otherwise cosine-decay it to zero over
    /// all steps.
    pub constant_lr: bool,
    /// 0 means full batch.
    pub batch_size: usize,
    /// Reshuffle every epoch. Leave off to follow a curriculum order.
    pub shuffle: bool,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self {
            learning_rate: 100.0,
            epochs: 100,
            seed: 42,
            constant_lr: true,
            batch_size: 0,
            shuffle: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub policy: ToyPolicy,
    /// Mean pre-update batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainedPolicy {
    pub fn write_trace_csv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "epoch,loss")?;
        for (e, l) in self.loss_trace.iter().enumerate() {
            writeln!(sink, "{},{l}", e + 1)?;
        }
        sink.flush()
    }
}

/// Gradient descent in the order records appear in `data` (or reshuffled
/// each epoch when `hyper.shuffle` is set).
pub fn train_toy_policy(
    data: &TrainingData,
    spec: &ObjectiveSpec,
    mut policy: ToyPolicy,
    hyper: &PolicyHyper,
) -> Result<TrainedPolicy, ObjectiveError> {
    if data.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if !(hyper.learning_rate >= 0.0 && hyper.learning_rate.is_finite()) {
        return Err(ObjectiveError::InvalidConfig("learning_rate must be >= 0".into()));
    }
    let resolved = resolve(&policy, data, spec.objective)?;
    let n = data.len();
    let bs = if hyper.batch_size == 0 { n } else { hyper.batch_size.min(n) };
    let steps_per_epoch = n.div_ceil(bs);
    let total_steps = (steps_per_epoch * hyper.epochs).max(1) as f64;
    let mut rng = seeding::rng(hyper.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);
    let mut step = 0usize;
    for _ in 0..hyper.epochs {
        if hyper.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(bs) {
            let (loss, grad) = resolved_loss_and_grad(&policy, &resolved, chunk, spec)?;
            epoch_loss += loss * chunk.len() as f64;
            let lr = if hyper.constant_lr {
                hyper.learning_rate
            } else {
                0.5 * hyper.learning_rate * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos())
            };
            for (t, g) in policy.theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
            step += 1;
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok(TrainedPolicy {
        policy,
        loss_trace: trace,
    })
}

/// Implicit reward gap `beta * [(theta_c - ref_c) - (theta_r - ref_r)]`.
pub fn implicit_reward_gap(policy: &ToyPolicy, pair: &PolicyPair, beta: f64) -> Result<f64, ObjectiveError> {
    let (tc, rc) = policy.log_probs(&pair.prompt, SourceClass::Unlabeled, &pair.chosen)?;
    let (tr, rr) = policy.log_probs(&pair.prompt, SourceClass::Unlabeled, &pair.rejected)?;
    Ok(beta * ((tc - rc) - (tr - rr)))
}

/// Fraction of pairs whose implicit reward gap is strictly positive.
pub fn implicit_reward_accuracy(policy: &ToyPolicy, pairs: &[PolicyPair], beta: f64) -> Result<f64, ObjectiveError> {
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let mut hits = 0usize;
    for p in pairs {
        if implicit_reward_gap(policy, p, beta)? > 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    policy: ToyPolicy,
}

pub fn save_policy<W: Write>(policy: &ToyPolicy, sink: W) -> Result<(), ObjectiveError> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        policy: policy.clone(),
    };
    serde_json::to_writer(sink, &ck).map_err(|e| ObjectiveError::Checkpoint(e.to_string()))
}

pub fn load_policy<R: Read>(source: R) -> Result<ToyPolicy, ObjectiveError> {
    let ck: Checkpoint =
        serde_json::from_reader(source).map_err(|e| ObjectiveError::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(ObjectiveError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    let mut p = ck.policy;
    let mut expect = 0;
    for c in &p.contexts {
        if c.offset != expect || c.responses.is_empty() {
            return Err(ObjectiveError::Checkpoint("inconsistent context layout".into()));
        }
        expect += c.responses.len();
    }
    if p.theta.len() != expect || p.ref_logits.len() != expect {
        return Err(ObjectiveError::Checkpoint("logit tables do not match contexts".into()));
    }
    p.rebuild_index();
    Ok(p)
}
