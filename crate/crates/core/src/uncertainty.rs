//! Gap posterior fitting and the uncertainty profile.
//!
//! For a binary preference probability `P` the profile is
//!
//! ```text
//! shannon   = H(E P)                         (entropy of the mean)
//! aleatoric = E[-(P ln P + (1-P) ln(1-P))]
//! epistemic = shannon - aleatoric            (mutual information, floored at 0)
//! balent    = (m h(P+_c) + (1-m) h(P+_r) + shannon) / (shannon + ln 2)
//! u         = exp(balent), clamped to [0, e]
//! ```
//!
//! with `m = E P` and `h(P+_.)` the differential entropy of the tilted
//! densities computed by [`Quadrature::posterior_entropy`].

use std::f64::consts::{E, LN_2};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logitnormal::{softplus, Integrand, KernelError, Orientation, Quadrature};
use crate::model::{GapPosterior, PreferencePair};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UncertaintyError {
    #[error("record {0:?}: need at least 2 reward samples per side")]
    InsufficientSamples(String),
    #[error("record {0:?}: paired estimation needs equally long sample lists")]
    UnpairedSamples(String),
    #[error("record {0:?} has no gap source")]
    Unresolvable(String),
    #[error("Monte-Carlo profile needs at least {min} draws, got {got}")]
    TooFewDraws { min: usize, got: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub mean_prob: f64,
    pub shannon: f64,
    pub epistemic: f64,
    pub aleatoric: f64,
    pub balent: f64,
    pub u: f64,
}

/// Profile plus the two posterior differential entropies that feed `balent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileDetail {
    pub record: UncertaintyRecord,
    pub h_chosen: f64,
    pub h_rejected: f64,
}

/// How chosen and rejected MC draws are combined into a gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapEstimator {
    /// Draws come from separate forward passes; variances add.
    #[default]
    Independent,
    /// Draw `i` of both sides shares a dropout mask; use per-index differences.
    Paired,
}

/// Reward baseline for single-response records.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SftBaseline {
    /// `R_r` is degenerate at zero.
    #[default]
    ZeroConstant,
    /// Proxy draws for an empty response.
    SuppliedSamples(Vec<f64>),
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn clamp_posterior(mu: f64, sigma: f64, sigma_min: f64) -> Result<GapPosterior, UncertaintyError> {
    GapPosterior::with_floor(mu, sigma, sigma_min).map_err(|e| {
        UncertaintyError::Kernel(KernelError::InvalidPosterior {
            mu: e.mu,
            sigma: e.sigma,
        })
    })
}

fn independent_gap(
    id: &str,
    chosen: &[f64],
    rejected: &[f64],
    sigma_min: f64,
) -> Result<GapPosterior, UncertaintyError> {
    if chosen.len() < 2 || rejected.len() < 2 {
        return Err(UncertaintyError::InsufficientSamples(id.to_string()));
    }
    let (mc, vc) = mean_var(chosen);
    let (mr, vr) = mean_var(rejected);
    clamp_posterior(mc - mr, (vc + vr).sqrt(), sigma_min)
}

/// Gap posterior from paired draws, an override, or independent draws.
pub fn fit_gap_posterior(
    pair: &PreferencePair,
    config: &crate::logitnormal::QuadratureConfig,
) -> Result<GapPosterior, UncertaintyError> {
    fit_gap_posterior_with(pair, GapEstimator::Independent, config)
}

pub fn fit_gap_posterior_with(
    pair: &PreferencePair,
    estimator: GapEstimator,
    config: &crate::logitnormal::QuadratureConfig,
) -> Result<GapPosterior, UncertaintyError> {
    if let Some(o) = pair.gap_override {
        return clamp_posterior(o.mu, o.sigma, config.sigma_min);
    }
    let chosen = &pair.reward_samples_chosen;
    let rejected = pair.reward_samples_rejected.as_deref().unwrap_or(&[]);
    match estimator {
        GapEstimator::Independent => {
            independent_gap(&pair.id, chosen, rejected, config.sigma_min)
        }
        GapEstimator::Paired => {
            if chosen.len() < 2 || rejected.len() < 2 {
                return Err(UncertaintyError::InsufficientSamples(pair.id.clone()));
            }
            if chosen.len() != rejected.len() {
                return Err(UncertaintyError::UnpairedSamples(pair.id.clone()));
            }
            let diffs: Vec<f64> = chosen.iter().zip(rejected).map(|(c, r)| c - r).collect();
            let (mu, var) = mean_var(&diffs);
            clamp_posterior(mu, var.sqrt(), config.sigma_min)
        }
    }
}

/// Gap posterior for a single-response record against a baseline reward.
pub fn sft_gap_posterior(
    pair: &PreferencePair,
    baseline: &SftBaseline,
    config: &crate::logitnormal::QuadratureConfig,
) -> Result<GapPosterior, UncertaintyError> {
    let chosen = &pair.reward_samples_chosen;
    if chosen.len() < 2 {
        return Err(UncertaintyError::InsufficientSamples(pair.id.clone()));
    }
    match baseline {
        SftBaseline::ZeroConstant => {
            let (mc, vc) = mean_var(chosen);
            clamp_posterior(mc, vc.sqrt(), config.sigma_min)
        }
        SftBaseline::SuppliedSamples(base) => {
            independent_gap(&pair.id, chosen, base, config.sigma_min)
        }
    }
}

/// Picks the gap source for any record: override, then paired samples,
/// then the single-response baseline for class-labelled records.
pub fn resolve_posterior(
    pair: &PreferencePair,
    estimator: GapEstimator,
    baseline: &SftBaseline,
    config: &crate::logitnormal::QuadratureConfig,
) -> Result<GapPosterior, UncertaintyError> {
    if pair.gap_override.is_some() || pair.has_rejected_samples() {
        fit_gap_posterior_with(pair, estimator, config)
    } else if !pair.source_class.is_unlabeled() {
        sft_gap_posterior(pair, baseline, config)
    } else {
        Err(UncertaintyError::Unresolvable(pair.id.clone()))
    }
}

/// `-(m ln m + r ln r)` with `0 ln 0 = 0`.
fn shannon2(m: f64, r: f64) -> f64 {
    let xlx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    -(xlx(m) + xlx(r))
}

fn assemble(m: f64, m_rej: f64, aleatoric: f64, h_c: f64, h_r: f64) -> UncertaintyRecord {
    let shannon = shannon2(m, m_rej);
    let epistemic = (shannon - aleatoric).max(0.0);
    let weighted = |w: f64, h: f64| if w > 0.0 { w * h } else { 0.0 };
    let balent = (weighted(m, h_c) + weighted(m_rej, h_r) + shannon) / (shannon + LN_2);
    UncertaintyRecord {
        mean_prob: m,
        shannon,
        epistemic,
        aleatoric,
        balent,
        u: balent.exp().clamp(0.0, E),
    }
}

pub fn uncertainty_profile(
    post: &GapPosterior,
    quad: &Quadrature,
) -> Result<UncertaintyRecord, UncertaintyError> {
    Ok(profile_detail(post, quad)?.record)
}

pub fn profile_detail(
    post: &GapPosterior,
    quad: &Quadrature,
) -> Result<ProfileDetail, UncertaintyError> {
    let m = quad.expect(Integrand::Identity, post)?;
    let flipped = GapPosterior {
        mu: -post.mu,
        ..*post
    };
    // 1 - m computed directly keeps precision when m rounds to 1
    let m_rej = quad.expect(Integrand::Identity, &flipped)?;
    let aleatoric = quad.expect(Integrand::NegBinaryEntropy, post)?;
    let entropy_or_zero = |o, weight: f64| -> Result<f64, UncertaintyError> {
        match quad.posterior_entropy(o, post) {
            Ok(h) => Ok(h),
            Err(KernelError::DegenerateTilt) if weight <= 0.0 => Ok(0.0),
            Err(e) => Err(e.into()),
        }
    };
    let h_c = entropy_or_zero(Orientation::ChosenWins, m)?;
    let h_r = entropy_or_zero(Orientation::RejectedWins, m_rej)?;
    Ok(ProfileDetail {
        record: assemble(m, m_rej, aleatoric, h_c, h_r),
        h_chosen: h_c,
        h_rejected: h_r,
    })
}

/// Monte-Carlo estimate with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McProfile {
    pub estimate: ProfileDetail,
    /// Batch-means standard error of each field.
    pub std_error: ProfileDetail,
    pub n_draws: usize,
}

pub const MC_MIN_DRAWS: usize = 10_000;
const MC_BATCHES: usize = 100;

#[derive(Default, Clone, Copy)]
struct McSums {
    n: f64,
    p: f64,
    q: f64,
    aleatoric: f64,
    /// sum of P ln P + P ln f(P)
    x_c: f64,
    /// sum of Q ln Q + Q ln f(P), with Q = 1 - P
    x_r: f64,
}

impl McSums {
    fn add(&mut self, o: &McSums) {
        self.n += o.n;
        self.p += o.p;
        self.q += o.q;
        self.aleatoric += o.aleatoric;
        self.x_c += o.x_c;
        self.x_r += o.x_r;
    }

    fn detail(&self) -> ProfileDetail {
        let m = self.p / self.n;
        let r = self.q / self.n;
        let a = self.aleatoric / self.n;
        // h(P+) = -(1/m) E[P ln P + P ln f(P)] + ln m
        let h_c = -(self.x_c / self.n) / m + m.ln();
        let h_r = -(self.x_r / self.n) / r + r.ln();
        ProfileDetail {
            record: assemble(m, r, a, h_c, h_r),
            h_chosen: h_c,
            h_rejected: h_r,
        }
    }
}

/// Brute-force profile from draws `Z ~ N(mu, sigma^2)`, `P = sigmoid(Z)`,
/// with the logit-normal density evaluated in closed form at every draw.
/// It shares no code with the quadrature path.
pub fn mc_profile(
    post: &GapPosterior,
    n_draws: usize,
    seed: u64,
) -> Result<McProfile, UncertaintyError> {
    if n_draws < MC_MIN_DRAWS {
        return Err(UncertaintyError::TooFewDraws {
            min: MC_MIN_DRAWS,
            got: n_draws,
        });
    }
    if !(post.mu.is_finite() && post.sigma.is_finite() && post.sigma > 0.0) {
        return Err(KernelError::InvalidPosterior {
            mu: post.mu,
            sigma: post.sigma,
        }
        .into());
    }
    let (mu, sigma) = (post.mu, post.sigma);
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI).ln() + sigma.ln();
    let mut rng = seeding::rng(seed);
    let mut batches = vec![McSums::default(); MC_BATCHES];
    for i in 0..n_draws {
        let eps: f64 = StandardNormal.sample(&mut rng);
        let z = mu + sigma * eps;
        let ln_p = -softplus(-z);
        let ln_q = -softplus(z);
        let (p, q) = (ln_p.exp(), ln_q.exp());
        let logit = ln_p - ln_q;
        let ln_f = -log_norm - ln_p - ln_q - (logit - mu).powi(2) / (2.0 * sigma * sigma);
        let b = &mut batches[i * MC_BATCHES / n_draws];
        b.n += 1.0;
        b.p += p;
        b.q += q;
        b.aleatoric += -(p * ln_p + q * ln_q);
        b.x_c += p * ln_p + p * ln_f;
        b.x_r += q * ln_q + q * ln_f;
    }
    let mut total = McSums::default();
    for b in &batches {
        total.add(b);
    }
    let estimate = total.detail();
    let per_batch: Vec<ProfileDetail> = batches.iter().map(McSums::detail).collect();
    let se = |get: fn(&ProfileDetail) -> f64| {
        let k = per_batch.len() as f64;
        let mean = per_batch.iter().map(get).sum::<f64>() / k;
        let var = per_batch.iter().map(|d| (get(d) - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    };
    let std_error = ProfileDetail {
        record: UncertaintyRecord {
            mean_prob: se(|d| d.record.mean_prob),
            shannon: se(|d| d.record.shannon),
            epistemic: se(|d| d.record.epistemic),
            aleatoric: se(|d| d.record.aleatoric),
            balent: se(|d| d.record.balent),
            u: se(|d| d.record.u),
        },
        h_chosen: se(|d| d.h_chosen),
        h_rejected: se(|d| d.h_rejected),
    };
    Ok(McProfile {
        estimate,
        std_error,
        n_draws,
    })
}

/// Fields the Monte-Carlo cross-check compares.
pub const ORACLE_FIELDS: [&str; 6] = ["mean_prob", "aleatoric", "h_chosen", "h_rejected", "balent", "u"];

/// Named fields of a [`ProfileDetail`], for reporting.
pub fn detail_fields(d: &ProfileDetail) -> [(&'static str, f64); 8] {
    let r = &d.record;
    [
        ("mean_prob", r.mean_prob),
        ("shannon", r.shannon),
        ("epistemic", r.epistemic),
        ("aleatoric", r.aleatoric),
        ("h_chosen", d.h_chosen),
        ("h_rejected", d.h_rejected),
        ("balent", r.balent),
        ("u", r.u),
    ]
}

/// Largest |quadrature - MC| / SE over the given fields. Fields whose SE is
/// zero are compared exactly.
pub fn max_z_score(quad: &ProfileDetail, mc: &McProfile, fields: &[&str]) -> f64 {
    let q = detail_fields(quad);
    let e = detail_fields(&mc.estimate);
    let s = detail_fields(&mc.std_error);
    q.iter()
        .zip(e.iter())
        .zip(s.iter())
        .filter(|(((name, _), _), _)| fields.contains(name))
        .map(|(((_, a), (_, b)), (_, se))| {
            let d = (a - b).abs();
            if *se > 0.0 {
                d / se
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logitnormal::QuadratureConfig;
    use crate::model::{GapOverride, SourceClass};

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn quad() -> Quadrature {
        Quadrature::new(cfg()).unwrap()
    }

    #[test]
    fn fit_from_independent_samples() {
        let pair = PreferencePair::new("a", vec![1.0, 2.0, 3.0], Some(vec![0.0, 1.0, 2.0]));
        let g = fit_gap_posterior(&pair, &cfg()).unwrap();
        assert!((g.mu - 1.0).abs() < 1e-15);
        assert!((g.sigma - 2f64.sqrt()).abs() < 1e-15);
        assert!(!g.clamped);
    }

    #[test]
    fn zero_variance_is_clamped() {
        let pair = PreferencePair::new("a", vec![5.0; 3], Some(vec![1.0; 3]));
        let g = fit_gap_posterior(&pair, &cfg()).unwrap();
        assert_eq!(g.mu, 4.0);
        assert_eq!(g.sigma, 1e-6);
        assert!(g.clamped);
    }

    #[test]
    fn override_takes_precedence() {
        let mut pair = PreferencePair::new("a", vec![1.0, 9.0], Some(vec![0.0, 4.0]));
        pair.gap_override = Some(GapOverride { mu: 2.0, sigma: 0.5 });
        let g = fit_gap_posterior(&pair, &cfg()).unwrap();
        assert_eq!((g.mu, g.sigma, g.clamped), (2.0, 0.5, false));
    }

    #[test]
    fn too_few_samples() {
        let pair = PreferencePair::new("a", vec![1.0], Some(vec![0.0, 1.0]));
        assert_eq!(
            fit_gap_posterior(&pair, &cfg()),
            Err(UncertaintyError::InsufficientSamples("a".into()))
        );
    }

    #[test]
    fn paired_mode_uses_differences() {
        let pair = PreferencePair::new("a", vec![1.0, 2.0, 3.0], Some(vec![0.0, 1.0, 2.0]));
        let g = fit_gap_posterior_with(&pair, GapEstimator::Paired, &cfg()).unwrap();
        assert_eq!(g.mu, 1.0);
        assert!(g.clamped, "identical differences have zero spread");
        let uneven = PreferencePair::new("b", vec![1.0, 2.0, 3.0], Some(vec![0.0, 1.0]));
        assert!(matches!(
            fit_gap_posterior_with(&uneven, GapEstimator::Paired, &cfg()),
            Err(UncertaintyError::UnpairedSamples(_))
        ));
    }

    #[test]
    fn sft_baselines() {
        let pair = PreferencePair::new("s", vec![1.0, 2.0, 3.0], None);
        let g = sft_gap_posterior(&pair, &SftBaseline::ZeroConstant, &cfg()).unwrap();
        assert!((g.mu - 2.0).abs() < 1e-15 && (g.sigma - 1.0).abs() < 1e-15);

        let base = SftBaseline::SuppliedSamples(vec![0.0, 0.0, 2.0]);
        let g = sft_gap_posterior(&pair, &base, &cfg()).unwrap();
        assert!((g.mu - (2.0 - 2.0 / 3.0)).abs() < 1e-15);
        assert!((g.sigma - (1.0f64 + 4.0 / 3.0).sqrt()).abs() < 1e-15);

        let single = PreferencePair::new("s", vec![1.0], None);
        assert!(matches!(
            sft_gap_posterior(&single, &SftBaseline::ZeroConstant, &cfg()),
            Err(UncertaintyError::InsufficientSamples(_))
        ));
    }

    #[test]
    fn resolve_picks_the_right_source() {
        let mut sft = PreferencePair::new("s", vec![1.0, 2.0, 3.0], None);
        assert!(matches!(
            resolve_posterior(&sft, GapEstimator::Independent, &SftBaseline::ZeroConstant, &cfg()),
            Err(UncertaintyError::Unresolvable(_))
        ));
        sft.source_class = SourceClass::Expert;
        let g = resolve_posterior(&sft, GapEstimator::Independent, &SftBaseline::ZeroConstant, &cfg())
            .unwrap();
        assert!((g.mu - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_profile() {
        let p = GapPosterior::with_floor(0.0, 0.0, 1e-6).unwrap();
        let r = uncertainty_profile(&p, &quad()).unwrap();
        assert!((r.mean_prob - 0.5).abs() < 1e-6);
        assert!((r.shannon - LN_2).abs() < 1e-6);
        assert!((r.aleatoric - LN_2).abs() < 1e-6);
        assert!(r.epistemic.abs() < 1e-6);
        assert!(r.u < 1e-3, "u = {}", r.u);
    }

    #[test]
    fn profile_is_reflection_symmetric() {
        let q = quad();
        let a = uncertainty_profile(&GapPosterior::new(2.0, 1.0).unwrap(), &q).unwrap();
        let b = uncertainty_profile(&GapPosterior::new(-2.0, 1.0).unwrap(), &q).unwrap();
        assert!((a.mean_prob + b.mean_prob - 1.0).abs() < 1e-9);
        for (x, y) in [
            (a.shannon, b.shannon),
            (a.aleatoric, b.aleatoric),
            (a.epistemic, b.epistemic),
            (a.balent, b.balent),
            (a.u, b.u),
        ] {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn extreme_gap_does_not_produce_nan() {
        let q = quad();
        for (mu, s) in [(800.0, 1e-6), (-800.0, 1e-6), (40.0, 0.5), (0.0, 50.0)] {
            let r = uncertainty_profile(&GapPosterior::new(mu, s).unwrap(), &q).unwrap();
            assert!(r.u.is_finite() && (0.0..=E).contains(&r.u), "{mu} {s}: {r:?}");
            assert!(r.balent <= 1.0);
        }
    }

    #[test]
    fn mc_is_deterministic_and_centered() {
        let p = GapPosterior::new(0.0, 1.0).unwrap();
        let a = mc_profile(&p, 1_000_000, 9).unwrap();
        let b = mc_profile(&p, 1_000_000, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.estimate.record.mean_prob - 0.5).abs() < 0.002);
        assert!(matches!(
            mc_profile(&p, 10, 9),
            Err(UncertaintyError::TooFewDraws { .. })
        ));
    }

    #[test]
    fn quadrature_agrees_with_mc_at_unit_gap() {
        let p = GapPosterior::new(1.0, 1.0).unwrap();
        let q = profile_detail(&p, &quad()).unwrap();
        let mc = mc_profile(&p, 1_000_000, 2024).unwrap();
        let z = max_z_score(
            &q,
            &mc,
            &["mean_prob", "shannon", "epistemic", "aleatoric", "balent", "u"],
        );
        assert!(z <= 3.0, "max z-score {z}");
    }
}
