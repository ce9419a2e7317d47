//! Logit-normal kernel.
//!
//! If the reward gap is `Z ~ N(mu, sigma^2)` then `P = sigmoid(Z)` has density
//!
//! ```text
//! f(p) = exp(-(logit(p) - mu)^2 / (2 sigma^2)) / (sqrt(2 pi) sigma p (1 - p))
//! ```
//!
//! and CDF `Phi((logit(p) - mu) / sigma)`. All logarithms are natural.
//!
//! Two uniform trapezoid grids are used:
//!
//! * a p-grid on `[0, 1]` with `n_steps` intervals, for the differential
//!   entropy of the success-tilted density `f+(p) = p f(p) / E[P]`;
//! * a z-grid on `mu ± z_halfwidth * sigma`, for moments `E[g(P)]`, where the
//!   integrand is smooth regardless of how spiky `f` is in p.
//!
//! Integrand values at `p = 0` and `p = 1` are fixed to their limits (zero).
//! When the tilted density is too narrow or too heavy-tailed for the p-grid
//! (its trapezoid mass misses 1 by more than [`P_GRID_MASS_TOL`]) the entropy
//! is evaluated on the z-grid instead, via the same change of variables.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::model::GapPosterior;

/// Largest tolerated deviation of the p-grid mass of `f+` from 1.
pub const P_GRID_MASS_TOL: f64 = 1e-4;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("probability {0} is outside [0, 1]")]
    Domain(f64),
    #[error("invalid posterior: mu={mu}, sigma={sigma}")]
    InvalidPosterior { mu: f64, sigma: f64 },
    #[error("invalid quadrature config: {0}")]
    InvalidConfig(String),
    #[error("tilted density has zero mass for this orientation")]
    DegenerateTilt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub n_steps: usize,
    /// Half-width of the z-grid in units of sigma.
    pub z_halfwidth: f64,
    pub sigma_min: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            n_steps: 10_000,
            z_halfwidth: 8.0,
            sigma_min: 1e-6,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.n_steps < 100 {
            return Err(KernelError::InvalidConfig(format!(
                "n_steps must be >= 100, got {}",
                self.n_steps
            )));
        }
        if !(self.z_halfwidth >= 4.0 && self.z_halfwidth.is_finite()) {
            return Err(KernelError::InvalidConfig(format!(
                "z_halfwidth must be >= 4, got {}",
                self.z_halfwidth
            )));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(KernelError::InvalidConfig(format!(
                "sigma_min must be positive, got {}",
                self.sigma_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrand {
    /// `g(p) = p`
    Identity,
    /// `g(p) = -(p ln p + (1 - p) ln(1 - p))`
    NegBinaryEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    ChosenWins,
    RejectedWins,
}

/// Which grid produced a posterior entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyRoute {
    PGrid,
    ZGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorEntropy {
    pub nats: f64,
    pub route: EntropyRoute,
    /// Trapezoid mass of `f+` on the p-grid.
    pub p_grid_mass: f64,
}

fn check_posterior(post: &GapPosterior) -> Result<(), KernelError> {
    if post.mu.is_finite() && post.sigma.is_finite() && post.sigma > 0.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidPosterior {
            mu: post.mu,
            sigma: post.sigma,
        })
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-(p ln p + q ln q)` with `p = sigmoid(z)`, `q = sigmoid(-z)`.
#[inline]
fn binary_entropy_at(z: f64) -> f64 {
    let ln_p = -softplus(-z);
    let ln_q = -softplus(z);
    -(ln_p.exp() * ln_p + ln_q.exp() * ln_q)
}

/// Log-density evaluated from `ln p` and `ln q = ln(1 - p)`. Swapping the
/// two logs and negating `mu` gives the bit-identical result.
#[inline]
fn ln_density_pq(ln_p: f64, ln_q: f64, mu: f64, sigma: f64) -> f64 {
    let d = (ln_p - ln_q) - mu;
    -(d * d) / (2.0 * sigma * sigma) - (LN_SQRT_2PI + sigma.ln()) - (ln_p + ln_q)
}

/// Density of `P` at `p`; zero at the endpoints.
pub fn density(p: f64, post: &GapPosterior) -> Result<f64, KernelError> {
    check_posterior(post)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(KernelError::Domain(p));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(ln_density_pq(p.ln(), (1.0 - p).ln(), post.mu, post.sigma).exp())
}

pub fn cdf(p: f64, post: &GapPosterior) -> Result<f64, KernelError> {
    check_posterior(post)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(KernelError::Domain(p));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let x = ((p.ln() - (1.0 - p).ln()) - post.mu) / post.sigma;
    Ok(standard_normal_cdf(x))
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Precomputed grids for a [`QuadratureConfig`].
///
/// Construction costs a few tens of thousands of logarithms; build one and
/// share it (it is `Sync`) across records.
#[derive(Debug, Clone)]
pub struct Quadrature {
    config: QuadratureConfig,
    /// `ln(k / N)` for `k = 0..=N`.
    ln_p: Vec<f64>,
    /// `ln((N - k) / N)`, i.e. `ln_p` reversed.
    ln_q: Vec<f64>,
    /// Standardized z-grid nodes, symmetric about zero.
    t: Vec<f64>,
    /// Trapezoid weights times the standard normal density at `t`.
    w: Vec<f64>,
}

impl Quadrature {
    pub fn new(config: QuadratureConfig) -> Result<Self, KernelError> {
        config.validate()?;
        let n = config.n_steps;
        let nf = n as f64;
        let ln_p: Vec<f64> = (0..=n).map(|k| (k as f64 / nf).ln()).collect();
        let ln_q: Vec<f64> = ln_p.iter().rev().copied().collect();
        let hw = config.z_halfwidth;
        let dt = 2.0 * hw / nf;
        let t: Vec<f64> = (0..=n)
            .map(|j| hw * ((2 * j) as f64 - nf) / nf)
            .collect();
        let w = t
            .iter()
            .enumerate()
            .map(|(j, &tj)| {
                let end = if j == 0 || j == n { 0.5 } else { 1.0 };
                end * dt * (-0.5 * tj * tj - LN_SQRT_2PI).exp()
            })
            .collect();
        Ok(Self {
            config,
            ln_p,
            ln_q,
            t,
            w,
        })
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.config
    }

    /// `E[g(P)]` by trapezoid on the z-grid.
    pub fn expect(&self, integrand: Integrand, post: &GapPosterior) -> Result<f64, KernelError> {
        check_posterior(post)?;
        Ok(self.expect_unchecked(integrand, post.mu, post.sigma))
    }

    fn expect_unchecked(&self, integrand: Integrand, mu: f64, sigma: f64) -> f64 {
        let nodes = self.t.iter().zip(&self.w).map(|(&t, &w)| (mu + sigma * t, w));
        let raw: f64 = match integrand {
            Integrand::Identity => nodes.map(|(z, w)| w * sigmoid(z)).sum(),
            Integrand::NegBinaryEntropy => nodes.map(|(z, w)| w * binary_entropy_at(z)).sum(),
        };
        match integrand {
            Integrand::Identity => raw.clamp(0.0, 1.0),
            Integrand::NegBinaryEntropy => raw.clamp(0.0, std::f64::consts::LN_2),
        }
    }

    /// `E[g(P)]` by trapezoid against `f(p)` on the p-grid. Used to cross-check
    /// the z-grid route; it loses accuracy when `f` is very spiky or puts
    /// mass within one cell of the endpoints.
    pub fn expect_p_grid(
        &self,
        integrand: Integrand,
        post: &GapPosterior,
    ) -> Result<f64, KernelError> {
        check_posterior(post)?;
        let n = self.config.n_steps;
        let mut sum = 0.0;
        for k in 1..n {
            let (lp, lq) = (self.ln_p[k], self.ln_q[k]);
            let f = ln_density_pq(lp, lq, post.mu, post.sigma).exp();
            let g = match integrand {
                Integrand::Identity => lp.exp(),
                Integrand::NegBinaryEntropy => -(lp.exp() * lp + lq.exp() * lq),
            };
            sum += f * g;
        }
        Ok(sum / n as f64)
    }

    /// Trapezoid integral of `f` over the p-grid.
    pub fn density_mass(&self, post: &GapPosterior) -> Result<f64, KernelError> {
        check_posterior(post)?;
        let n = self.config.n_steps;
        let sum: f64 = (1..n)
            .map(|k| ln_density_pq(self.ln_p[k], self.ln_q[k], post.mu, post.sigma).exp())
            .sum();
        Ok(sum / n as f64)
    }

    /// Differential entropy (nats) of the tilted density `f+`.
    ///
    /// `RejectedWins` is computed as `ChosenWins` with `mu` negated, since
    /// `1 - P` is logit-normal with location `-mu`.
    pub fn posterior_entropy(
        &self,
        orientation: Orientation,
        post: &GapPosterior,
    ) -> Result<f64, KernelError> {
        Ok(self.posterior_entropy_detail(orientation, post)?.nats)
    }

    pub fn posterior_entropy_detail(
        &self,
        orientation: Orientation,
        post: &GapPosterior,
    ) -> Result<PosteriorEntropy, KernelError> {
        check_posterior(post)?;
        let mu = match orientation {
            Orientation::ChosenWins => post.mu,
            Orientation::RejectedWins => -post.mu,
        };
        let sigma = post.sigma;
        let mass = self.expect_unchecked(Integrand::Identity, mu, sigma);
        if !(mass > 0.0) {
            return Err(KernelError::DegenerateTilt);
        }
        let ln_mass = mass.ln();

        let n = self.config.n_steps;
        let (mut ent, mut tilted_mass) = (0.0, 0.0);
        for k in 1..n {
            let (lp, lq) = (self.ln_p[k], self.ln_q[k]);
            let ln_fp = lp + ln_density_pq(lp, lq, mu, sigma) - ln_mass;
            let fp = ln_fp.exp();
            if fp > 0.0 {
                ent += fp * ln_fp;
                tilted_mass += fp;
            }
        }
        let h = n as f64;
        let p_grid_mass = tilted_mass / h;
        let p_grid = -ent / h;

        if (p_grid_mass - 1.0).abs() <= P_GRID_MASS_TOL && p_grid.is_finite() {
            return Ok(PosteriorEntropy {
                nats: p_grid.min(0.0),
                route: EntropyRoute::PGrid,
                p_grid_mass,
            });
        }

        // ln f+(sigmoid(z)) = softplus(z) - t^2/2 - ln(sqrt(2 pi) sigma) - ln E[P]
        let c = LN_SQRT_2PI + sigma.ln() + ln_mass;
        let acc: f64 = self
            .t
            .iter()
            .zip(&self.w)
            .map(|(&t, &w)| {
                let z = mu + sigma * t;
                let p = sigmoid(z);
                w * p * (softplus(z) - 0.5 * t * t - c)
            })
            .sum();
        Ok(PosteriorEntropy {
            nats: (-acc / mass).min(0.0),
            route: EntropyRoute::ZGrid,
            p_grid_mass,
        })
    }
}

/// Trapezoid of a function on a uniform grid of `[a, b]` with `n` intervals.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|k| f(a + k as f64 * h)).sum();
    h * (inner + 0.5 * (f(a) + f(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn post(mu: f64, sigma: f64) -> GapPosterior {
        GapPosterior::new(mu, sigma).unwrap()
    }

    fn quad() -> Quadrature {
        Quadrature::new(QuadratureConfig::default()).unwrap()
    }

    #[test]
    fn density_at_one_half() {
        let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
        assert!((density(0.5, &post(0.0, 1.0)).unwrap() - 4.0 * inv_sqrt_2pi).abs() < 1e-14);
        assert!((density(0.5, &post(0.0, 2.0)).unwrap() - 2.0 * inv_sqrt_2pi).abs() < 1e-14);
        assert!((density(0.5, &post(0.0, 1.0)).unwrap() - 1.595769).abs() < 1e-6);
    }

    #[test]
    fn density_domain() {
        let p = post(0.0, 1.0);
        assert_eq!(density(0.0, &p).unwrap(), 0.0);
        assert_eq!(density(1.0, &p).unwrap(), 0.0);
        assert_eq!(density(1.5, &p), Err(KernelError::Domain(1.5)));
        assert!(matches!(density(f64::NAN, &p), Err(KernelError::Domain(_))));
        assert!(matches!(cdf(-0.1, &p), Err(KernelError::Domain(_))));
    }

    #[test]
    fn density_integrates_to_one() {
        let p = post(1.0, 1.0);
        let mass = trapezoid(|x| density(x, &p).unwrap(), 0.0, 1.0, 10_000);
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn cdf_examples() {
        for s in [0.1, 1.0, 3.0] {
            assert_eq!(cdf(0.5, &post(0.0, s)).unwrap(), 0.5);
            let m = 1.3;
            let median = sigmoid(m);
            assert!((cdf(median, &post(m, s)).unwrap() - 0.5).abs() < 1e-12);
        }
        // Phi(logit(0.9) - 1) = Phi(1.1972245773)
        let v = cdf(0.9, &post(1.0, 1.0)).unwrap();
        assert!((v - 0.884_390_483_611).abs() < 1e-9, "{v}");
        assert_eq!(cdf(0.0, &post(0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(cdf(1.0, &post(0.0, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn identity_expectation_is_one_half_at_zero() {
        let v = quad().expect(Integrand::Identity, &post(0.0, 1.0)).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn degenerate_aleatoric_is_ln2() {
        let v = quad()
            .expect(Integrand::NegBinaryEntropy, &post(0.0, 1e-6))
            .unwrap();
        assert!((v - LN_2).abs() < 1e-9, "{v}");
    }

    #[test]
    fn posterior_entropy_symmetric_at_zero_mean() {
        let q = quad();
        let p = post(0.0, 1.0);
        let a = q.posterior_entropy(Orientation::ChosenWins, &p).unwrap();
        let b = q.posterior_entropy(Orientation::RejectedWins, &p).unwrap();
        assert_eq!(a, b);
        assert!(a < 0.0);
    }

    #[test]
    fn narrow_posteriors_fall_back_to_the_z_grid() {
        let q = quad();
        let d = q
            .posterior_entropy_detail(Orientation::ChosenWins, &post(0.3, 1e-6))
            .unwrap();
        assert_eq!(d.route, EntropyRoute::ZGrid);
        // Gaussian limit: ln(sigma * p(1-p) * sqrt(2 pi e)), p = sigmoid(0.3 + sigma^2 p(1-p) ...)
        let p = sigmoid(0.3);
        let expected = (1e-6 * p * (1.0 - p) * (2.0 * PI * std::f64::consts::E).sqrt()).ln();
        assert!((d.nats - expected).abs() < 1e-3, "{} vs {expected}", d.nats);

        let d = q
            .posterior_entropy_detail(Orientation::ChosenWins, &post(1.0, 0.5))
            .unwrap();
        assert_eq!(d.route, EntropyRoute::PGrid);
    }

    #[test]
    fn grid_reflection_is_exact() {
        let q = quad();
        let n = q.config.n_steps;
        for &(mu, s) in &[(1.3, 0.7), (-2.0, 2.5), (0.0, 0.1)] {
            for k in [1, 17, n / 3, n / 2, n - 1] {
                let a = ln_density_pq(q.ln_p[k], q.ln_q[k], mu, s);
                let b = ln_density_pq(q.ln_p[n - k], q.ln_q[n - k], -mu, s);
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = QuadratureConfig::default();
        c.n_steps = 50;
        assert!(Quadrature::new(c).is_err());
        let mut c = QuadratureConfig::default();
        c.z_halfwidth = 3.0;
        assert!(Quadrature::new(c).is_err());
        let mut c = QuadratureConfig::default();
        c.sigma_min = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn invalid_posterior_is_rejected() {
        let bad = GapPosterior {
            mu: 0.0,
            sigma: 0.0,
            clamped: false,
        };
        assert!(matches!(
            quad().expect(Integrand::Identity, &bad),
            Err(KernelError::InvalidPosterior { .. })
        ));
    }
}
