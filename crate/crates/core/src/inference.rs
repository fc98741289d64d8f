//! Conditional distribution of trace-involving scores and the Monte Carlo
//! test of common source.
//!
//! Under the common-source hypothesis the full score vector `(s_m, s_n)` is
//! multivariate normal with covariance built from the joint pair-membership
//! design, so the trace block given the control block is Gaussian with
//!
//! ```text
//! mu    = theta 1_m + S_mn S_nn^{-1} (s_n - theta 1_n)
//! Sigma = S_mm - S_mn S_nn^{-1} S_nm
//! ```
//!
//! `S_nn^{-1}` is applied through the spectral form of the score model; the
//! parameter-free design products are precomputed once per `(N, M)` so each
//! parameter draw costs one `m x m` assembly and Cholesky. The test statistic
//! integrates the conditional-likelihood tail probability over the parameter
//! posterior by simulation: for each draw, compare the conditional likelihood
//! of the observed trace scores against one resampled trace-score vector and
//! average the indicator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::posterior::{sample_posterior_draw, PosteriorError, PriorConfig};
use crate::rng::stream_rng;
use crate::score_model::{
    eigenvalues, pair_count, sums_of_squares, ModelParams, Projectors, ScoreModelError,
};

#[derive(Error, Debug)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ScoreModelError),

    #[error(transparent)]
    Posterior(#[from] PosteriorError),

    #[error("need at least one trace object, got 0")]
    NoTraceObjects,

    #[error("trace score vector has length {got}, expected {expected}")]
    TraceLengthMismatch { got: usize, expected: usize },

    #[error(
        "conditional covariance is not positive-definite (smallest eigenvalue {min_eigenvalue:e}); \
         the parameter draw is invalid"
    )]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("need at least {min} Monte Carlo iterations, got {got}")]
    TooFewIterations { got: usize, min: usize },

    #[error("h = {h} and c(alpha) = {c_alpha} must both lie in [0, 1]")]
    InvalidProbability { h: f64, c_alpha: f64 },
}

/// Minimum inner Monte Carlo size accepted by [`test_statistic`].
pub const MIN_INNER_ITERATIONS: usize = 100;

/// Design products for the conditional moments that depend only on the
/// object counts, computed once and reused across parameter draws.
#[derive(Debug)]
pub struct ConditionalContext {
    n_controls: usize,
    m_traces: usize,
    /// Pair-intersection counts among trace-involving pairs (m x m).
    g_mm: DMatrix<f64>,
    /// Pair-intersection counts between the two blocks (m x n).
    g_mn: DMatrix<f64>,
    /// `G_mn 1_n`.
    g1: DVector<f64>,
    /// `G_mn W` where `W` factors the rank-(N-1) projector (m x N).
    b2: DMatrix<f64>,
    /// `g1 g1' / n`.
    a1: DMatrix<f64>,
    /// `c B2 B2'`.
    a2: DMatrix<f64>,
    /// `G_mn P3 G_nm`, assembled as `GG - A1 - A2`.
    a3: DMatrix<f64>,
    projectors: std::sync::Arc<Projectors>,
}

impl ConditionalContext {
    pub fn new(n_controls: usize, m_traces: usize) -> Result<Self, InferenceError> {
        if n_controls < 3 {
            return Err(ScoreModelError::TooFewObjects(n_controls).into());
        }
        if m_traces == 0 {
            return Err(InferenceError::NoTraceObjects);
        }
        let total = n_controls + m_traces;
        let n = pair_count(n_controls);
        let m = pair_count(total) - n;

        // Objects are indexed traces-first; lexicographic pair order then puts
        // the m trace-involving pairs before the n control-only pairs.
        let mut mixed_pairs = Vec::with_capacity(m);
        let mut control_pairs = Vec::with_capacity(n);
        for i in 0..total {
            for j in (i + 1)..total {
                if i < m_traces {
                    mixed_pairs.push((i, j));
                } else {
                    control_pairs.push((i, j));
                }
            }
        }

        let shared = |a: (usize, usize), b: (usize, usize)| -> f64 {
            let mut c = 0.0;
            if a.0 == b.0 || a.0 == b.1 {
                c += 1.0;
            }
            if a.1 == b.0 || a.1 == b.1 {
                c += 1.0;
            }
            c
        };

        let g_mm = DMatrix::from_fn(m, m, |r, c| shared(mixed_pairs[r], mixed_pairs[c]));
        let g_mn = DMatrix::from_fn(m, n, |r, c| shared(mixed_pairs[r], control_pairs[c]));

        let projectors = Projectors::for_objects(n_controls)?;
        let g1 = &g_mn * DVector::from_element(n, 1.0);
        let b2 = &g_mn * projectors.w();
        let gg = &g_mn * g_mn.transpose();
        let a1 = &g1 * g1.transpose() / n as f64;
        let a2 = &b2 * b2.transpose() * projectors.coeff();
        let a3 = &gg - &a1 - &a2;

        Ok(Self {
            n_controls,
            m_traces,
            g_mm,
            g_mn,
            g1,
            b2,
            a1,
            a2,
            a3,
            projectors,
        })
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn m_traces(&self) -> usize {
        self.m_traces
    }

    pub fn m_scores(&self) -> usize {
        self.g_mm.nrows()
    }

    pub fn n_scores(&self) -> usize {
        pair_count(self.n_controls)
    }

    /// Bind a control score vector, precomputing its projections.
    pub fn with_scores(&self, s_n: &DVector<f64>) -> Result<ScoredContext<'_>, InferenceError> {
        let n = self.n_scores();
        if s_n.len() != n {
            return Err(ScoreModelError::LengthMismatch {
                got: s_n.len(),
                expected: n,
                n_objects: self.n_controls,
            }
            .into());
        }
        let s_bar = s_n.sum() / n as f64;
        // G_mn P2 s_n = c B2 (W' s_n); G_mn P3 s_n by complement.
        let u2 = &self.b2 * self.projectors.wt_mul(s_n) * self.projectors.coeff();
        let g_s = &self.g_mn * s_n;
        let u3 = &g_s - &self.g1 * s_bar - &u2;
        Ok(ScoredContext {
            ctx: self,
            s_bar,
            u2,
            u3,
        })
    }
}

/// A [`ConditionalContext`] bound to one control score vector.
#[derive(Debug)]
pub struct ScoredContext<'a> {
    ctx: &'a ConditionalContext,
    s_bar: f64,
    u2: DVector<f64>,
    u3: DVector<f64>,
}

/// Mean, covariance and lower-triangular factor of the trace-score block
/// given the control scores and one parameter setting.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Lower-triangular `L` with `L L' = cov` (up to the jitter actually
    /// needed to factor it).
    pub factor: DMatrix<f64>,
}

impl<'a> ScoredContext<'a> {
    /// Conditional moments for one parameter draw; `O(m^2)` assembly plus one
    /// `m x m` Cholesky.
    pub fn moments(&self, params: &ModelParams) -> Result<ConditionalMoments, InferenceError> {
        let ev = eigenvalues(params, self.ctx.n_controls);
        ev.validate()?;
        let m = self.ctx.m_scores();
        let sa = params.sigma2_a;

        let mut mean = DVector::from_element(m, params.theta);
        mean.axpy(sa * (self.s_bar - params.theta) / ev.lambda1, &self.ctx.g1, 1.0);
        mean.axpy(sa / ev.lambda2, &self.u2, 1.0);
        mean.axpy(sa / ev.lambda3, &self.u3, 1.0);

        let sa2 = sa * sa;
        let mut cov = &self.ctx.g_mm * sa;
        for i in 0..m {
            cov[(i, i)] += params.sigma2_e;
        }
        cov -= &self.ctx.a1 * (sa2 / ev.lambda1);
        cov -= &self.ctx.a2 * (sa2 / ev.lambda2);
        cov -= &self.ctx.a3 * (sa2 / ev.lambda3);

        // Symmetrize, then factor with an escalating jitter ladder.
        let cov = (&cov + cov.transpose()) * 0.5;
        let factor = cholesky_with_jitter(&cov)?;
        Ok(ConditionalMoments { mean, cov, factor })
    }
}

fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, InferenceError> {
    let m = cov.nrows();
    if let Some(chol) = nalgebra::Cholesky::new(cov.clone()) {
        return Ok(chol.unpack());
    }
    let base = 1e-12 * cov.trace() / m as f64;
    let mut jitter = if base > 0.0 { base } else { 1e-300 };
    for _ in 0..3 {
        let mut attempt = cov.clone();
        for i in 0..m {
            attempt[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(attempt) {
            return Ok(chol.unpack());
        }
        jitter *= 10.0;
    }
    let min_eigenvalue = nalgebra::SymmetricEigen::new(cov.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Err(InferenceError::NotPositiveDefinite { min_eigenvalue })
}

/// Conditional moments of the trace block given control scores and
/// parameters (one-shot convenience over [`ConditionalContext`]).
pub fn conditional_moments(
    s_n: &DVector<f64>,
    params: &ModelParams,
    n_controls: usize,
    m_traces: usize,
) -> Result<ConditionalMoments, InferenceError> {
    let ctx = ConditionalContext::new(n_controls, m_traces)?;
    let scored = ctx.with_scores(s_n)?;
    scored.moments(params)
}

/// Draw one trace-score vector `mu + L z` from the conditional distribution.
pub fn sample_sm_star<R: Rng + ?Sized>(
    moments: &ConditionalMoments,
    rng: &mut R,
) -> DVector<f64> {
    let m = moments.mean.len();
    let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    &moments.mean + &moments.factor * z
}

/// Gaussian log-density of a trace-score vector under the conditional
/// moments, evaluated through the triangular factor.
pub fn conditional_log_likelihood(
    s_m: &DVector<f64>,
    moments: &ConditionalMoments,
) -> Result<f64, InferenceError> {
    let m = moments.mean.len();
    if s_m.len() != m {
        return Err(InferenceError::TraceLengthMismatch {
            got: s_m.len(),
            expected: m,
        });
    }
    let mut log_det = 0.0;
    for i in 0..m {
        let d = moments.factor[(i, i)];
        if !(d > 0.0) {
            return Err(InferenceError::NotPositiveDefinite { min_eigenvalue: d });
        }
        log_det += d.ln();
    }
    let resid = s_m - &moments.mean;
    let y = moments
        .factor
        .solve_lower_triangular(&resid)
        .ok_or(InferenceError::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
    let quad = y.dot(&y);
    Ok(-0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + quad) - log_det)
}

/// Decision of the left-tail test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RejectCommonSource,
    FailToRejectCommonSource,
}

/// Result of the Monte Carlo test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    /// Estimate of the posterior-integrated tail probability, in [0, 1].
    pub h: f64,
    /// Binomial standard error `sqrt(h (1-h) / K)`.
    pub mc_std_err: f64,
    pub k: usize,
    pub n_controls: usize,
    pub m_traces: usize,
    pub seed: u64,
    pub decision: Option<Decision>,
    pub c_alpha: Option<f64>,
}

impl TestOutcome {
    /// Attach the threshold and the resulting decision.
    pub fn with_decision(mut self, c_alpha: f64) -> Result<Self, InferenceError> {
        let decision = decide(self.h, c_alpha)?;
        self.decision = Some(decision);
        self.c_alpha = Some(c_alpha);
        Ok(self)
    }
}

/// Left-tail decision rule: reject common source iff `h <= c_alpha`
/// (boundary inclusive).
pub fn decide(h: f64, c_alpha: f64) -> Result<Decision, InferenceError> {
    if !(0.0..=1.0).contains(&h) || !(0.0..=1.0).contains(&c_alpha) {
        return Err(InferenceError::InvalidProbability { h, c_alpha });
    }
    Ok(if h <= c_alpha {
        Decision::RejectCommonSource
    } else {
        Decision::FailToRejectCommonSource
    })
}

/// Where each Monte Carlo iteration gets its model parameters.
#[derive(Debug, Clone, Copy)]
pub enum PsiSource<'a> {
    /// Fresh i.i.d. posterior draw per iteration (the standard test).
    Posterior(&'a PriorConfig),
    /// Fixed known parameters (calibration studies and oracle tests).
    Fixed(ModelParams),
}

/// Monte Carlo estimate of the integrated test statistic.
///
/// Per iteration `i`: derive stream `(seed, i)`; draw parameters; build the
/// conditional moments; compare the conditional log-likelihood of the
/// observed trace scores against one resampled trace-score vector; `h` is
/// the fraction of iterations where the observed likelihood was at least as
/// large (ties count as success). The decision field is left unset.
pub fn test_statistic_with(
    s_m: &DVector<f64>,
    s_n: &DVector<f64>,
    n_controls: usize,
    m_traces: usize,
    psi: PsiSource<'_>,
    k: usize,
    seed: u64,
) -> Result<TestOutcome, InferenceError> {
    if k < MIN_INNER_ITERATIONS {
        return Err(InferenceError::TooFewIterations {
            got: k,
            min: MIN_INNER_ITERATIONS,
        });
    }
    let ctx = ConditionalContext::new(n_controls, m_traces)?;
    if s_m.len() != ctx.m_scores() {
        return Err(InferenceError::TraceLengthMismatch {
            got: s_m.len(),
            expected: ctx.m_scores(),
        });
    }
    let scored = ctx.with_scores(s_n)?;
    let stats = sums_of_squares(s_n, n_controls)?;
    if let PsiSource::Posterior(prior) = psi {
        prior.validate()?;
    }
    let n_pairs = ctx.n_scores();

    let indicators: Result<Vec<(bool, bool)>, InferenceError> = (0..k as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let (params, stalled) = match psi {
                PsiSource::Fixed(p) => (p, false),
                PsiSource::Posterior(prior) => {
                    let draw = sample_posterior_draw(&stats, n_controls, n_pairs, prior, &mut rng);
                    (draw.params(), crate::posterior::draw_stalled(&draw))
                }
            };
            let moments = scored.moments(&params)?;
            let ll_obs = conditional_log_likelihood(s_m, &moments)?;
            let sm_star = sample_sm_star(&moments, &mut rng);
            let ll_star = conditional_log_likelihood(&sm_star, &moments)?;
            Ok((ll_obs >= ll_star, stalled))
        })
        .collect();
    let indicators = indicators?;

    let stalled = indicators.iter().filter(|&&(_, s)| s).count() as u64;
    crate::posterior::check_batch_stalls(stalled, k as u64).map_err(PosteriorError::from)?;
    let hits = indicators.iter().filter(|&&(b, _)| b).count();
    let h = hits as f64 / k as f64;
    Ok(TestOutcome {
        h,
        mc_std_err: (h * (1.0 - h) / k as f64).sqrt(),
        k,
        n_controls,
        m_traces,
        seed,
        decision: None,
        c_alpha: None,
    })
}

/// Standard entry point: parameters drawn from their posterior given `s_n`.
pub fn test_statistic(
    s_m: &DVector<f64>,
    s_n: &DVector<f64>,
    n_controls: usize,
    m_traces: usize,
    prior: &PriorConfig,
    k: usize,
    seed: u64,
) -> Result<TestOutcome, InferenceError> {
    test_statistic_with(s_m, s_n, n_controls, m_traces, PsiSource::Posterior(prior), k, seed)
}
