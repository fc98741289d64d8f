//! Direct i.i.d. sampling from the posterior of the score-model parameters.
//!
//! The two sums of squares of a control score vector are independent, with
//! `SS_a / eta_a ~ chi2(N-1)` and `SS_e / eta_e ~ chi2(n-N)` under the
//! reparameterization `eta_a = (N-2) sigma2_a + sigma2_e`, `eta_e = sigma2_e`.
//! With Inverse-Gamma priors on `(eta_a, eta_e)` the posteriors are again
//! Inverse-Gamma, so each draw is exact: no burn-in, no thinning. Mapping a
//! draw back to `(sigma2_a, sigma2_e)` can produce a negative `sigma2_a`;
//! such draws are rejected and redrawn (counted per draw), which truncates
//! the joint prior to the valid cone and keeps every retained covariance
//! positive-definite. Given the variances, `theta` is conjugate Normal and
//! its posterior moments reduce to scalars through the spectral identity
//! `1' Sigma^{-1} 1 = n / lambda1`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;
use crate::score_model::{
    eigenvalues, pair_count, sums_of_squares, ModelParams, ScoreModelError, SumsOfSquares,
};

/// Redraws allowed for a single posterior draw. Exhausting the window means
/// the truncated posterior carries almost no mass inside the valid cone; the
/// draw then falls back to the cone's boundary (`sigma2_a = 0`), which is
/// where the truncated posterior concentrates in that regime.
const MAX_REJECTIONS_PER_DRAW: u64 = 10_000;

/// A batch where more than this fraction of draws exhaust their redraw
/// window aborts: the nonnegativity constraint is almost never satisfied
/// for this data, signalling that the score model does not fit it.
const MAX_BATCH_STALL_RATE: f64 = 0.99;

#[derive(Error, Debug)]
pub enum PosteriorError {
    #[error(transparent)]
    Model(#[from] ScoreModelError),

    #[error("prior hyperparameter {name} must be strictly positive, got {value}")]
    InvalidPrior { name: &'static str, value: f64 },

    #[error("need at least one posterior draw, got K = 0")]
    NoDraws,

    #[error(
        "{stalled} of {total} posterior draws exhausted their redraw window \
         (rejection rate above 99%); the nonnegativity constraint on sigma2_a \
         is almost never satisfied, which signals that the score model does \
         not fit these scores"
    )]
    ExcessiveRejection { stalled: u64, total: u64 },
}

/// Conjugate prior: Inverse-Gamma shapes/scales for the reparameterized
/// variances and a Normal prior for `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub alpha_a: f64,
    pub beta_a: f64,
    pub alpha_e: f64,
    pub beta_e: f64,
    pub mu0: f64,
    pub lambda2: f64,
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), PosteriorError> {
        let fields = [
            ("alpha_a", self.alpha_a),
            ("beta_a", self.beta_a),
            ("alpha_e", self.alpha_e),
            ("beta_e", self.beta_e),
            ("lambda2", self.lambda2),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(PosteriorError::InvalidPrior { name, value });
            }
        }
        if !self.mu0.is_finite() {
            return Err(PosteriorError::InvalidPrior {
                name: "mu0",
                value: self.mu0,
            });
        }
        Ok(())
    }

    /// Weakly informative default anchored on the observed scores:
    /// shapes `1e-3`; scales set to a `1e-3` fraction of each observed
    /// half-sum-of-squares so the prior stays negligible at any data scale;
    /// `mu0 = sbar`; `lambda2 = 10 * var(s_n)` (falling back to 1 when the
    /// scores are constant).
    pub fn default_for(s_n: &DVector<f64>, n_objects: usize) -> Result<Self, ScoreModelError> {
        PriorPolicy::default().resolve(s_n, n_objects)
    }
}

/// How a run obtains its prior: fully specified, or resolved from the
/// observed scores so the prior stays weak at any data scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorPolicy {
    /// Inverse-Gamma shapes as given; scales set to `scale_frac` of each
    /// observed half-sum-of-squares (floored by the score variance, then by
    /// an absolute minimum, for degenerate inputs); `mu0 = sbar` and
    /// `lambda2 = 10 * var(s_n)`.
    Auto {
        alpha_a: f64,
        alpha_e: f64,
        scale_frac: f64,
    },
    Fixed(PriorConfig),
}

impl Default for PriorPolicy {
    fn default() -> Self {
        PriorPolicy::Auto {
            alpha_a: 1e-3,
            alpha_e: 1e-3,
            scale_frac: 1e-3,
        }
    }
}

impl PriorPolicy {
    pub fn resolve(
        &self,
        s_n: &DVector<f64>,
        n_objects: usize,
    ) -> Result<PriorConfig, ScoreModelError> {
        match *self {
            PriorPolicy::Fixed(cfg) => Ok(cfg),
            PriorPolicy::Auto {
                alpha_a,
                alpha_e,
                scale_frac,
            } => {
                let stats = sums_of_squares(s_n, n_objects)?;
                let n = s_n.len() as f64;
                let var = s_n
                    .iter()
                    .map(|&s| (s - stats.s_bar) * (s - stats.s_bar))
                    .sum::<f64>()
                    / (n - 1.0);
                let floor = (scale_frac * var).max(1e-12);
                Ok(PriorConfig {
                    alpha_a,
                    beta_a: (scale_frac * stats.ss_a / 2.0).max(floor),
                    alpha_e,
                    beta_e: (scale_frac * stats.ss_e / 2.0).max(floor),
                    mu0: stats.s_bar,
                    lambda2: if var > 0.0 { 10.0 * var } else { 1.0 },
                })
            }
        }
    }
}

/// One i.i.d. draw from the parameter posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    pub theta: f64,
    pub sigma2_a: f64,
    pub sigma2_e: f64,
    pub eta_a: f64,
    pub eta_e: f64,
    /// Redraws consumed by the `sigma2_a >= 0` constraint for this draw.
    pub rejected_count: u64,
}

impl PosteriorDraw {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            theta: self.theta,
            sigma2_a: self.sigma2_a,
            sigma2_e: self.sigma2_e,
        }
    }
}

fn inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    // If X ~ Gamma(shape, rate = scale) then 1/X ~ InverseGamma(shape, scale).
    let gamma = Gamma::new(shape, 1.0 / scale).expect("valid gamma parameters");
    1.0 / gamma.sample(rng)
}

/// Draw the reparameterized variances from their independent Inverse-Gamma
/// posteriors: shapes `(alpha_a + (N-1)/2, alpha_e + (n-N)/2)`, scales
/// `(SS_a/2 + beta_a, SS_e/2 + beta_e)`.
pub fn sample_eta<R: Rng + ?Sized>(
    ss_a: f64,
    ss_e: f64,
    n_objects: usize,
    n_pairs: usize,
    prior: &PriorConfig,
    rng: &mut R,
) -> (f64, f64) {
    let shape_a = prior.alpha_a + (n_objects as f64 - 1.0) / 2.0;
    let scale_a = ss_a / 2.0 + prior.beta_a;
    let shape_e = prior.alpha_e + (n_pairs - n_objects) as f64 / 2.0;
    let scale_e = ss_e / 2.0 + prior.beta_e;
    let eta_a = inverse_gamma(shape_a, scale_a, rng);
    let eta_e = inverse_gamma(shape_e, scale_e, rng);
    (eta_a, eta_e)
}

/// Invert the reparameterization. `None` signals a draw outside the valid
/// cone (`sigma2_a < 0`); the boundary `eta_a == eta_e` is accepted.
pub fn eta_to_sigma(eta_a: f64, eta_e: f64, n_objects: usize) -> Option<(f64, f64)> {
    let sigma2_a = (eta_a - eta_e) / (n_objects as f64 - 2.0);
    if sigma2_a < 0.0 {
        None
    } else {
        Some((sigma2_a, eta_e))
    }
}

/// Draw `theta` from its conditional Normal posterior. The spectral identity
/// `1' Sigma^{-1} 1 = n / lambda1` and `1' Sigma^{-1} s = n sbar / lambda1`
/// reduce the posterior moments to scalar arithmetic:
///
/// ```text
/// mu_p = (n sbar / l1 * lambda2 + mu0) / (n / l1 * lambda2 + 1)
/// var_p = lambda2 / (n / l1 * lambda2 + 1)
/// ```
pub fn sample_theta<R: Rng + ?Sized>(
    s_bar: f64,
    n_pairs: usize,
    sigma2_a: f64,
    sigma2_e: f64,
    n_objects: usize,
    prior: &PriorConfig,
    rng: &mut R,
) -> f64 {
    let (mu_p, var_p) = theta_posterior_moments(
        s_bar, n_pairs, sigma2_a, sigma2_e, n_objects, prior,
    );
    let normal = Normal::new(mu_p, var_p.sqrt()).expect("valid normal parameters");
    normal.sample(rng)
}

/// Posterior mean and variance of `theta` given the variance components.
pub fn theta_posterior_moments(
    s_bar: f64,
    n_pairs: usize,
    sigma2_a: f64,
    sigma2_e: f64,
    n_objects: usize,
    prior: &PriorConfig,
) -> (f64, f64) {
    let params = ModelParams {
        theta: 0.0,
        sigma2_a,
        sigma2_e,
    };
    let lambda1 = eigenvalues(&params, n_objects).lambda1;
    let n = n_pairs as f64;
    let precision = n / lambda1;
    let denom = precision * prior.lambda2 + 1.0;
    let mu_p = (precision * s_bar * prior.lambda2 + prior.mu0) / denom;
    let var_p = prior.lambda2 / denom;
    (mu_p, var_p)
}

/// One complete posterior draw from a prepared sums-of-squares decomposition,
/// consuming randomness only from `rng` (callers own stream derivation).
///
/// Draws outside the valid cone (`sigma2_a < 0`) are rejected and redrawn;
/// if the window is exhausted the draw resolves to the boundary
/// `sigma2_a = 0` (with a fresh `eta_e`), where the truncated posterior
/// concentrates when its interior mass vanishes. `rejected_count` records
/// the redraws either way so batches can police the overall rate.
pub fn sample_posterior_draw<R: Rng + ?Sized>(
    stats: &SumsOfSquares,
    n_objects: usize,
    n_pairs: usize,
    prior: &PriorConfig,
    rng: &mut R,
) -> PosteriorDraw {
    let mut rejected = 0u64;
    let (eta_a, eta_e, sigma2_a, sigma2_e) = loop {
        let (eta_a, eta_e) = sample_eta(stats.ss_a, stats.ss_e, n_objects, n_pairs, prior, rng);
        if let Some((sigma2_a, sigma2_e)) = eta_to_sigma(eta_a, eta_e, n_objects) {
            break (eta_a, eta_e, sigma2_a, sigma2_e);
        }
        rejected += 1;
        if rejected >= MAX_REJECTIONS_PER_DRAW {
            let (_, eta_e) =
                sample_eta(stats.ss_a, stats.ss_e, n_objects, n_pairs, prior, rng);
            break (eta_e, eta_e, 0.0, eta_e);
        }
    };
    let theta = sample_theta(
        stats.s_bar, n_pairs, sigma2_a, sigma2_e, n_objects, prior, rng,
    );
    PosteriorDraw {
        theta,
        sigma2_a,
        sigma2_e,
        eta_a,
        eta_e,
        rejected_count: rejected,
    }
}

/// Whether a draw resolved at the boundary after exhausting its window.
pub fn draw_stalled(draw: &PosteriorDraw) -> bool {
    draw.rejected_count >= MAX_REJECTIONS_PER_DRAW
}

/// Abort a batch in which essentially every draw stalled.
pub(crate) fn check_batch_stalls(stalled: u64, total: u64) -> Result<(), PosteriorError> {
    if (stalled as f64) > MAX_BATCH_STALL_RATE * total as f64 {
        return Err(PosteriorError::ExcessiveRejection { stalled, total });
    }
    Ok(())
}

/// Draw `k` i.i.d. posterior samples. Draw `i` depends only on `(seed, i)`,
/// so the batch parallelizes freely and reruns bit-identically.
pub fn sample_posterior(
    s_n: &DVector<f64>,
    n_objects: usize,
    prior: &PriorConfig,
    k: usize,
    seed: u64,
) -> Result<Vec<PosteriorDraw>, PosteriorError> {
    if k == 0 {
        return Err(PosteriorError::NoDraws);
    }
    prior.validate()?;
    let stats = sums_of_squares(s_n, n_objects)?;
    let n_pairs = pair_count(n_objects);
    let draws: Vec<PosteriorDraw> = (0..k as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            sample_posterior_draw(&stats, n_objects, n_pairs, prior, &mut rng)
        })
        .collect();
    let stalled = draws.iter().filter(|d| draw_stalled(d)).count() as u64;
    check_batch_stalls(stalled, k as u64)?;
    Ok(draws)
}

/// Write draws as CSV (`theta,sigma2_a,sigma2_e,eta_a,eta_e,rejected_count`)
/// for external diagnostics.
pub fn write_draws_csv<W: std::io::Write>(
    draws: &[PosteriorDraw],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theta", "sigma2_a", "sigma2_e", "eta_a", "eta_e", "rejected_count"])?;
    for d in draws {
        w.write_record([
            crate::fmt_f64(d.theta),
            crate::fmt_f64(d.sigma2_a),
            crate::fmt_f64(d.sigma2_e),
            crate::fmt_f64(d.eta_a),
            crate::fmt_f64(d.eta_e),
            d.rejected_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
