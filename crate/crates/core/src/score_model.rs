//! Linear random-effects model for a vector of within-source pairwise scores.
//!
//! For `N` objects from one source, the score of pair `(i, j)` is modeled as
//!
//! ```text
//! s_ij = theta + a_i + a_j + e_ij,    a_i ~ N(0, sigma2_a),  e_ij ~ N(0, sigma2_e)
//! ```
//!
//! so the stacked vector of the `n = C(N,2)` scores is multivariate normal
//! with mean `theta * 1_n` and covariance `Sigma = P P' sigma2_a + I sigma2_e`,
//! where `P` is the pair-membership design matrix. `Sigma` has exactly three
//! distinct eigenvalues,
//!
//! ```text
//! l1 = 2(N-1) sigma2_a + sigma2_e      (multiplicity 1, eigenvector 1_n/sqrt(n))
//! l2 = (N-2) sigma2_a + sigma2_e       (multiplicity N-1)
//! l3 = sigma2_e                        (multiplicity n-N)
//! ```
//!
//! and the three eigenprojectors are parameter-free, so determinants, inverses
//! and Gaussian log-densities come in closed form: no dense factorization is
//! ever needed on a hot path. Dense-matrix routes exist only inside test
//! oracles.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ScoreModelError {
    #[error("need at least 3 objects, got {0}")]
    TooFewObjects(usize),

    #[error("score vector has length {got}, expected C({n_objects},2) = {expected}")]
    LengthMismatch {
        got: usize,
        expected: usize,
        n_objects: usize,
    },

    #[error("eigenvalue lambda{index} = {value} is not positive; variance parameters are invalid")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("sigma2_e must be strictly positive, got {0}")]
    InvalidSigma2E(f64),

    #[error("sigma2_a must be nonnegative and finite, got {0}")]
    InvalidSigma2A(f64),

    #[error("theta must be finite, got {0}")]
    InvalidTheta(f64),
}

/// Number of unordered pairs of `n_objects` objects.
pub fn pair_count(n_objects: usize) -> usize {
    n_objects * (n_objects - 1) / 2
}

/// Canonical pair enumeration: `(i, j)` with `i < j` in lexicographic order.
pub fn pair_list(n_objects: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(pair_count(n_objects));
    for i in 0..n_objects {
        for j in (i + 1)..n_objects {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Parameters of the score model: within-source mean and the two variance
/// components (object effect and lack of fit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: f64,
    pub sigma2_a: f64,
    pub sigma2_e: f64,
}

impl ModelParams {
    pub fn new(theta: f64, sigma2_a: f64, sigma2_e: f64) -> Result<Self, ScoreModelError> {
        if !theta.is_finite() {
            return Err(ScoreModelError::InvalidTheta(theta));
        }
        if !(sigma2_a >= 0.0) || !sigma2_a.is_finite() {
            return Err(ScoreModelError::InvalidSigma2A(sigma2_a));
        }
        if !(sigma2_e > 0.0) || !sigma2_e.is_finite() {
            return Err(ScoreModelError::InvalidSigma2E(sigma2_e));
        }
        Ok(Self {
            theta,
            sigma2_a,
            sigma2_e,
        })
    }
}

/// Pair-membership design matrix: row `p` for pair `(i, j)` has ones in
/// columns `i` and `j` and zeros elsewhere.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    n_objects: usize,
    pairs: Vec<(usize, usize)>,
    matrix: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Build the design matrix for `n_objects >= 3` objects.
pub fn design_matrix(n_objects: usize) -> Result<DesignMatrix, ScoreModelError> {
    if n_objects < 3 {
        return Err(ScoreModelError::TooFewObjects(n_objects));
    }
    let pairs = pair_list(n_objects);
    let n = pairs.len();
    let mut matrix = DMatrix::zeros(n, n_objects);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        matrix[(row, i)] = 1.0;
        matrix[(row, j)] = 1.0;
    }
    Ok(DesignMatrix {
        n_objects,
        pairs,
        matrix,
    })
}

/// The three distinct eigenvalues of the score covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalues {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

/// Closed-form eigenvalues of `P P' sigma2_a + I sigma2_e`.
pub fn eigenvalues(params: &ModelParams, n_objects: usize) -> Eigenvalues {
    let nf = n_objects as f64;
    Eigenvalues {
        lambda1: 2.0 * (nf - 1.0) * params.sigma2_a + params.sigma2_e,
        lambda2: (nf - 2.0) * params.sigma2_a + params.sigma2_e,
        lambda3: params.sigma2_e,
    }
}

impl Eigenvalues {
    pub fn validate(&self) -> Result<(), ScoreModelError> {
        for (index, value) in [(1, self.lambda1), (2, self.lambda2), (3, self.lambda3)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ScoreModelError::NonPositiveEigenvalue { index, value });
            }
        }
        Ok(())
    }
}

/// Parameter-free eigenprojectors of the score covariance for a fixed object
/// count, applied in factored form (`O(n*N)` per product, never `O(n^2)`).
///
/// The rank-(N-1) projector is `c * W W'` with
/// `W = P/(N-1) - 1_n 1_N'/n` and `c = (N-1)^2/(N-2)`; the rank-1 projector
/// averages against `1_n`, and the third is the complement.
#[derive(Debug)]
pub struct Projectors {
    design: DesignMatrix,
    w: DMatrix<f64>,
    coeff: f64,
}

static PROJECTOR_CACHE: OnceLock<Mutex<BTreeMap<usize, Arc<Projectors>>>> = OnceLock::new();

impl Projectors {
    /// Cached, shared projector set for `n_objects` objects.
    pub fn for_objects(n_objects: usize) -> Result<Arc<Projectors>, ScoreModelError> {
        let cache = PROJECTOR_CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
        let mut guard = cache.lock().expect("projector cache poisoned");
        if let Some(p) = guard.get(&n_objects) {
            return Ok(Arc::clone(p));
        }
        let built = Arc::new(Self::build(n_objects)?);
        guard.insert(n_objects, Arc::clone(&built));
        Ok(built)
    }

    fn build(n_objects: usize) -> Result<Self, ScoreModelError> {
        let design = design_matrix(n_objects)?;
        let n = design.n_pairs() as f64;
        let nf = n_objects as f64;
        let mut w = design.matrix() / (nf - 1.0);
        w.add_scalar_mut(-1.0 / n);
        let coeff = (nf - 1.0) * (nf - 1.0) / (nf - 2.0);
        Ok(Self { design, w, coeff })
    }

    pub fn n_objects(&self) -> usize {
        self.design.n_objects()
    }

    pub fn n_pairs(&self) -> usize {
        self.design.n_pairs()
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    /// `v1 v1' v` with `v1 = 1_n / sqrt(n)`.
    pub fn apply_v1(&self, v: &DVector<f64>) -> DVector<f64> {
        let mean = v.sum() / v.len() as f64;
        DVector::from_element(v.len(), mean)
    }

    /// Rank-(N-1) projector applied to `v`.
    pub fn apply_p2(&self, v: &DVector<f64>) -> DVector<f64> {
        let wt_v = self.w.tr_mul(v);
        &self.w * wt_v * self.coeff
    }

    /// Complement projector applied to `v`.
    pub fn apply_p3(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.apply_v1(v) - self.apply_p2(v)
    }

    /// `W' v`; exposed so callers can reuse the intermediate product.
    pub fn wt_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.w.tr_mul(v)
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    /// Dense rank-1 projector (diagnostics and tests; hot paths use the
    /// factored `apply_*` methods).
    pub fn dense_v1(&self) -> DMatrix<f64> {
        let n = self.n_pairs();
        DMatrix::from_element(n, n, 1.0 / n as f64)
    }

    /// Dense rank-(N-1) projector.
    pub fn dense_p2(&self) -> DMatrix<f64> {
        &self.w * self.w.transpose() * self.coeff
    }

    /// Dense rank-(n-N) projector.
    pub fn dense_p3(&self) -> DMatrix<f64> {
        let n = self.n_pairs();
        DMatrix::identity(n, n) - self.dense_v1() - self.dense_p2()
    }
}

/// Eigenvalues, multiplicities and projectors of the score covariance for one
/// parameter setting. Projectors are shared read-only across threads; only
/// the eigenvalues change with the parameters.
#[derive(Debug, Clone)]
pub struct EigenStructure {
    pub eigenvalues: Eigenvalues,
    /// Multiplicities of (lambda1, lambda2, lambda3) = (1, N-1, n-N).
    pub multiplicities: (usize, usize, usize),
    pub projectors: Arc<Projectors>,
}

pub fn eigen_structure(
    params: &ModelParams,
    n_objects: usize,
) -> Result<EigenStructure, ScoreModelError> {
    let projectors = Projectors::for_objects(n_objects)?;
    let n = projectors.n_pairs();
    Ok(EigenStructure {
        eigenvalues: eigenvalues(params, n_objects),
        multiplicities: (1, n_objects - 1, n - n_objects),
        projectors,
    })
}

impl EigenStructure {
    /// Reconstruct the dense covariance (tests and diagnostics only).
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        self.projectors.dense_v1() * self.eigenvalues.lambda1
            + self.projectors.dense_p2() * self.eigenvalues.lambda2
            + self.projectors.dense_p3() * self.eigenvalues.lambda3
    }
}

/// Log-determinant of the score covariance:
/// `log l1 + (N-1) log l2 + (n-N) log l3`.
pub fn log_det_sigma(params: &ModelParams, n_objects: usize) -> Result<f64, ScoreModelError> {
    if n_objects < 3 {
        return Err(ScoreModelError::TooFewObjects(n_objects));
    }
    let ev = eigenvalues(params, n_objects);
    ev.validate()?;
    let n = pair_count(n_objects);
    Ok(ev.lambda1.ln()
        + (n_objects as f64 - 1.0) * ev.lambda2.ln()
        + (n - n_objects) as f64 * ev.lambda3.ln())
}

/// Apply the inverse covariance to a vector through the spectral form
/// `v1 v1'/l1 + P2/l2 + P3/l3`, without assembling or inverting any dense
/// matrix.
pub fn apply_sigma_inverse(
    params: &ModelParams,
    n_objects: usize,
    v: &DVector<f64>,
) -> Result<DVector<f64>, ScoreModelError> {
    let projectors = Projectors::for_objects(n_objects)?;
    let n = projectors.n_pairs();
    if v.len() != n {
        return Err(ScoreModelError::LengthMismatch {
            got: v.len(),
            expected: n,
            n_objects,
        });
    }
    let ev = eigenvalues(params, n_objects);
    ev.validate()?;
    let p1 = projectors.apply_v1(v);
    let p2 = projectors.apply_p2(v);
    let p3 = v - &p1 - &p2;
    Ok(p1 / ev.lambda1 + p2 / ev.lambda2 + p3 / ev.lambda3)
}

/// Decomposition of a score vector into its grand mean and the two
/// independent sums of squares that drive estimation and sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SumsOfSquares {
    pub ss_a: f64,
    pub ss_e: f64,
    pub s_bar: f64,
    /// Mean of the scores involving each object (length N).
    pub s_bar_by_object: DVector<f64>,
}

/// Sums of squares of a control score vector:
///
/// ```text
/// SS_a = (N-1)^2/(N-2) * sum_i (sbar_i - sbar)^2
/// SS_e = s'(I - v1 v1')s - SS_a
/// ```
///
/// where `sbar_i` averages the scores involving object `i`.
pub fn sums_of_squares(
    s_n: &DVector<f64>,
    n_objects: usize,
) -> Result<SumsOfSquares, ScoreModelError> {
    if n_objects < 3 {
        return Err(ScoreModelError::TooFewObjects(n_objects));
    }
    let n = pair_count(n_objects);
    if s_n.len() != n {
        return Err(ScoreModelError::LengthMismatch {
            got: s_n.len(),
            expected: n,
            n_objects,
        });
    }
    let nf = n_objects as f64;
    let s_bar = s_n.sum() / n as f64;

    let mut object_sums = vec![0.0_f64; n_objects];
    for (p, &(i, j)) in pair_list(n_objects).iter().enumerate() {
        object_sums[i] += s_n[p];
        object_sums[j] += s_n[p];
    }
    let s_bar_by_object = DVector::from_iterator(
        n_objects,
        object_sums.iter().map(|s| s / (nf - 1.0)),
    );

    let coeff = (nf - 1.0) * (nf - 1.0) / (nf - 2.0);
    let ss_a = coeff
        * s_bar_by_object
            .iter()
            .map(|&m| (m - s_bar) * (m - s_bar))
            .sum::<f64>();

    let centered_total: f64 = s_n.iter().map(|&s| (s - s_bar) * (s - s_bar)).sum();
    // Exact in theory; rounding may leave a tiny negative residue.
    let ss_e = (centered_total - ss_a).max(0.0);

    Ok(SumsOfSquares {
        ss_a,
        ss_e,
        s_bar,
        s_bar_by_object,
    })
}

/// Gaussian log-density of a control score vector through the independent
/// sums-of-squares form:
///
/// ```text
/// -2 log L = log l1 + (N-1) log l2 + (n-N) log l3 + n log 2pi
///            + n (sbar - theta)^2 / l1 + SS_a / l2 + SS_e / l3
/// ```
pub fn log_likelihood(
    s_n: &DVector<f64>,
    params: &ModelParams,
    n_objects: usize,
) -> Result<f64, ScoreModelError> {
    let ev = eigenvalues(params, n_objects);
    ev.validate()?;
    let ss = sums_of_squares(s_n, n_objects)?;
    let n = pair_count(n_objects) as f64;
    let nf = n_objects as f64;
    let d = ss.s_bar - params.theta;
    let minus_two = ev.lambda1.ln()
        + (nf - 1.0) * ev.lambda2.ln()
        + (n - nf) * ev.lambda3.ln()
        + n * (2.0 * std::f64::consts::PI).ln()
        + n * d * d / ev.lambda1
        + ss.ss_a / ev.lambda2
        + ss.ss_e / ev.lambda3;
    Ok(-0.5 * minus_two)
}

/// Closed-form method-of-moments estimates from the ANOVA decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaEstimates {
    pub theta: f64,
    pub sigma2_a: f64,
    pub sigma2_e: f64,
    /// Set when the raw object-variance estimate was negative and clipped to 0.
    pub clipped: bool,
}

impl AnovaEstimates {
    /// Convert into validated model parameters (fails when `sigma2_e == 0`,
    /// e.g. for a constant score vector).
    pub fn params(&self) -> Result<ModelParams, ScoreModelError> {
        ModelParams::new(self.theta, self.sigma2_a, self.sigma2_e)
    }
}

/// Point estimates: `theta = sbar`, `sigma2_e = MS_e`,
/// `sigma2_a = (MS_a - MS_e)/(N-2)` clipped at zero.
pub fn anova_estimates(
    s_n: &DVector<f64>,
    n_objects: usize,
) -> Result<AnovaEstimates, ScoreModelError> {
    let ss = sums_of_squares(s_n, n_objects)?;
    let n = pair_count(n_objects);
    let nf = n_objects as f64;
    let ms_a = ss.ss_a / (nf - 1.0);
    let ms_e = ss.ss_e / (n - n_objects) as f64;
    let raw = (ms_a - ms_e) / (nf - 2.0);
    let clipped = raw < 0.0;
    Ok(AnovaEstimates {
        theta: ss.s_bar,
        sigma2_a: if clipped { 0.0 } else { raw },
        sigma2_e: ms_e,
        clipped,
    })
}

/// Draw one control score vector from the generative model
/// `s = theta 1 + P a + e`.
pub fn simulate_score_vector<R: Rng + ?Sized>(
    params: &ModelParams,
    n_objects: usize,
    rng: &mut R,
) -> DVector<f64> {
    let sd_a = params.sigma2_a.sqrt();
    let sd_e = params.sigma2_e.sqrt();
    let effects: Vec<f64> = (0..n_objects)
        .map(|_| sd_a * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut out = Vec::with_capacity(pair_count(n_objects));
    for i in 0..n_objects {
        for j in (i + 1)..n_objects {
            out.push(
                params.theta + effects[i] + effects[j] + sd_e * rng.sample::<f64, _>(StandardNormal),
            );
        }
    }
    DVector::from_vec(out)
}

/// Draw a full partitioned score vector for `m_traces` trace objects and
/// `n_controls` control objects from one common source.
///
/// Objects are indexed traces-first, so the lexicographic pair enumeration
/// yields the trace-involving block followed by the control-only block; the
/// returned pair is `(s_m, s_n)`.
pub fn simulate_partitioned_scores<R: Rng + ?Sized>(
    params: &ModelParams,
    n_controls: usize,
    m_traces: usize,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    let total = n_controls + m_traces;
    let sd_a = params.sigma2_a.sqrt();
    let sd_e = params.sigma2_e.sqrt();
    let effects: Vec<f64> = (0..total)
        .map(|_| sd_a * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut s_m = Vec::new();
    let mut s_n = Vec::new();
    for i in 0..total {
        for j in (i + 1)..total {
            let s =
                params.theta + effects[i] + effects[j] + sd_e * rng.sample::<f64, _>(StandardNormal);
            if i < m_traces {
                s_m.push(s);
            } else {
                s_n.push(s);
            }
        }
    }
    (DVector::from_vec(s_m), DVector::from_vec(s_n))
}
