//! Per-source coefficient models and pseudo-spectrum resampling.
//!
//! Fitting projects each replicate onto the basis by QR least squares and
//! summarizes the source by the sample mean and covariance of the
//! coefficient vectors. With few replicates the covariance is rank-deficient;
//! before factorization its negative eigenvalues (rounding artifacts) are
//! clipped at zero, the minimal perturbation that keeps the sampler defined.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::basis::{evaluate_basis, BsplineBasis};
use super::{SpectraError, Spectrum};
use crate::rng::stream_rng;

/// Relative threshold on the QR diagonal below which the basis matrix is
/// declared rank-deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Eigenvalues of the coefficient covariance may round slightly negative;
/// anything below `-1e-10 * max_eigenvalue` is a real defect, not rounding.
const PSD_TOLERANCE: f64 = 1e-10;

/// Gaussian model of one source's B-spline coefficients.
#[derive(Debug, Clone)]
pub struct SplineSourceModel {
    source_id: String,
    grid: Arc<Vec<f64>>,
    basis: BsplineBasis,
    mean_coeffs: DVector<f64>,
    coeff_cov: DMatrix<f64>,
}

impl SplineSourceModel {
    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn basis(&self) -> &BsplineBasis {
        &self.basis
    }

    pub fn mean_coeffs(&self) -> &DVector<f64> {
        &self.mean_coeffs
    }

    pub fn coeff_cov(&self) -> &DMatrix<f64> {
        &self.coeff_cov
    }

    /// Mean spectrum reconstructed from the coefficient mean.
    pub fn reconstructed_mean(&self) -> Result<Spectrum, SpectraError> {
        let basis_matrix = evaluate_basis(&self.basis, &self.grid)?;
        let values = (&basis_matrix * &self.mean_coeffs).iter().copied().collect();
        Spectrum::new(Arc::clone(&self.grid), values, self.source_id.clone(), "mean")
    }
}

/// Fit a coefficient model to one source's replicates (>= 2, shared grid).
pub fn fit_spline_model(
    spectra: &[Spectrum],
    basis: &BsplineBasis,
) -> Result<SplineSourceModel, SpectraError> {
    if spectra.len() < 2 {
        return Err(SpectraError::TooFewReplicates {
            needed: 2,
            got: spectra.len(),
        });
    }
    let first = &spectra[0];
    for sp in &spectra[1..] {
        if !sp.same_grid(first) {
            return Err(SpectraError::GridMismatch {
                detail: format!(
                    "replicate {}:{} is on a different grid",
                    sp.source_id(),
                    sp.replicate_id()
                ),
            });
        }
        if sp.source_id() != first.source_id() {
            return Err(SpectraError::InvalidSpectrum {
                source_id: sp.source_id().to_string(),
                replicate_id: sp.replicate_id().to_string(),
                message: format!("mixed sources in one fit ({} vs {})", sp.source_id(), first.source_id()),
            });
        }
    }

    let grid = Arc::clone(first.grid_arc());
    let b = basis.num_bases();
    if grid.len() < b {
        return Err(SpectraError::RankDeficientBasis { ratio: 0.0 });
    }
    let basis_matrix = evaluate_basis(basis, &grid)?;

    // One thin QR shared by all replicates; a vanishing R diagonal flags too
    // many bases for this grid.
    let qr = basis_matrix.qr();
    let q = qr.q();
    let r = qr.r();
    let mut max_diag = 0.0_f64;
    let mut min_diag = f64::INFINITY;
    for i in 0..b {
        let d = r[(i, i)].abs();
        max_diag = max_diag.max(d);
        min_diag = min_diag.min(d);
    }
    if !(min_diag > RANK_TOLERANCE * max_diag) {
        return Err(SpectraError::RankDeficientBasis {
            ratio: if max_diag > 0.0 { min_diag / max_diag } else { 0.0 },
        });
    }

    let mut coeffs = Vec::with_capacity(spectra.len());
    for sp in spectra {
        let y = DVector::from_column_slice(sp.values());
        let qty = q.tr_mul(&y);
        let c = r
            .solve_upper_triangular(&qty)
            .ok_or(SpectraError::RankDeficientBasis {
                ratio: min_diag / max_diag,
            })?;
        coeffs.push(c);
    }

    let nrep = coeffs.len() as f64;
    let mut mean = DVector::zeros(b);
    for c in &coeffs {
        mean += c;
    }
    mean /= nrep;
    let mut cov = DMatrix::zeros(b, b);
    for c in &coeffs {
        let d = c - &mean;
        cov.syger(1.0 / (nrep - 1.0), &d, &d, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..b {
        for j in (i + 1)..b {
            cov[(i, j)] = cov[(j, i)];
        }
    }

    Ok(SplineSourceModel {
        source_id: first.source_id().to_string(),
        grid,
        basis: basis.clone(),
        mean_coeffs: mean,
        coeff_cov: cov,
    })
}

/// Prepared sampler for a fitted model: basis matrix and a symmetric factor
/// of the (PSD-repaired) coefficient covariance, amortized across draws.
#[derive(Debug, Clone)]
pub struct SplineResampler {
    source_id: String,
    grid: Arc<Vec<f64>>,
    basis_matrix: DMatrix<f64>,
    mean_coeffs: DVector<f64>,
    factor: DMatrix<f64>,
}

impl SplineResampler {
    pub fn new(model: &SplineSourceModel) -> Result<Self, SpectraError> {
        let basis_matrix = evaluate_basis(model.basis(), model.grid())?;
        let b = model.mean_coeffs.len();
        let sym = (model.coeff_cov() + model.coeff_cov().transpose()) * 0.5;
        let eigen = nalgebra::SymmetricEigen::new(sym);
        let max_eig = eigen.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let mut scaled = DMatrix::zeros(b, b);
        for (j, &ev) in eigen.eigenvalues.iter().enumerate() {
            if ev < -PSD_TOLERANCE * max_eig.max(1e-300) {
                return Err(SpectraError::IndefiniteCovariance { eigenvalue: ev });
            }
            let s = ev.max(0.0).sqrt();
            for i in 0..b {
                scaled[(i, j)] = eigen.eigenvectors[(i, j)] * s;
            }
        }
        Ok(Self {
            source_id: model.source_id.clone(),
            grid: Arc::clone(&model.grid),
            basis_matrix,
            mean_coeffs: model.mean_coeffs.clone(),
            factor: scaled,
        })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn grid_arc(&self) -> &Arc<Vec<f64>> {
        &self.grid
    }

    /// One pseudo-spectrum `B (mean + F z)` from the given stream.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, replicate_id: impl Into<String>) -> Spectrum {
        let b = self.mean_coeffs.len();
        let z = DVector::from_fn(b, |_, _| rng.sample::<f64, _>(StandardNormal));
        let coeffs = &self.mean_coeffs + &self.factor * z;
        let values: Vec<f64> = (&self.basis_matrix * coeffs).iter().copied().collect();
        Spectrum::new(
            Arc::clone(&self.grid),
            values,
            self.source_id.clone(),
            replicate_id,
        )
        .expect("resampled spectrum is valid by construction")
    }
}

/// Draw `count` pseudo-spectra; draw `i` depends only on `(seed, i)`, so the
/// batch parallelizes and reruns bit-identically.
pub fn resample_spectra(
    model: &SplineSourceModel,
    count: usize,
    seed: u64,
) -> Result<Vec<Spectrum>, SpectraError> {
    let resampler = SplineResampler::new(model)?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            resampler.draw(&mut rng, format!("pseudo{i:05}"))
        })
        .collect())
}
