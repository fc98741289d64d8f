//! Library-level simulation studies: the unconditional decision threshold,
//! the empirical power curve, the random match probability, and score
//! normality diagnostics.
//!
//! All three simulations share one scheme: sample sources and objects from a
//! library, score the sets, and run the Monte Carlo common-source test.
//! When a source cannot furnish enough distinct objects, pseudo-objects are
//! resampled from its fitted coefficient model (this can be forbidden for
//! purist runs). Outer iterations derive independent streams from
//! `(seed, iteration)`, parallelize freely, and are reassembled in iteration
//! order, so every result is bit-reproducible at any thread count.

mod diagnostics;

pub use diagnostics::{diagnostics_from_vectors, AxisDiagnostics, DiagnosticsReport};

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{test_statistic, InferenceError, TestOutcome};
use crate::kernel::{kernel_score, pairwise_scores, KernelError, KernelSpec};
use crate::posterior::PriorPolicy;
use crate::rng::{child_seed, stream_rng};
use crate::spectra::{
    fit_spline_model, BasisConfig, SourceLibrary, SpectraError, Spectrum, SplineResampler,
};

const STREAM_CALIBRATE: u64 = 0x11;
const STREAM_POWER: u64 = 0x22;
const STREAM_RMP: u64 = 0x33;
const STREAM_INNER: u64 = 0x44;

#[derive(Error, Debug)]
pub enum CalibrationError {
    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error(transparent)]
    Spectra(#[from] SpectraError),

    #[error(transparent)]
    Inference(#[from] InferenceError),

    #[error(
        "no source can furnish {needed} objects (resampling {resampling}); \
         nothing to calibrate"
    )]
    NoEligibleSource { needed: usize, resampling: &'static str },

    #[error("source '{source_id}' cannot furnish {needed} objects ({got} replicates, resampling unavailable)")]
    SourceCannotSupply {
        source_id: String,
        needed: usize,
        got: usize,
    },

    #[error("need at least 2 sources, got {0}")]
    TooFewSources(usize),

    #[error("{what} must lie in (0, 1), got {value}")]
    InvalidLevel { what: &'static str, value: f64 },

    #[error("need at least {min} outer iterations, got {got}")]
    TooFewOuterIterations { got: usize, min: usize },

    #[error("alpha grid must not be empty")]
    EmptyAlphaGrid,

    #[error(
        "source '{source_id}' supplies {got} replicates, need {needed} for {groups} disjoint groups of {group_size}"
    )]
    InsufficientGroups {
        source_id: String,
        got: usize,
        needed: usize,
        groups: usize,
        group_size: usize,
    },

    #[error("group size must be at least 2, got {0}")]
    GroupSizeTooSmall(usize),
}

/// Minimum outer iterations accepted by [`Pipeline::calibrate_c_alpha`].
pub const MIN_OUTER_ITERATIONS: usize = 500;

/// Shared configuration for the simulation studies: kernel, prior policy,
/// basis for resampling models, and whether resampling is allowed at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pipeline {
    pub kernel: KernelSpec,
    pub prior: PriorPolicy,
    pub basis: BasisConfig,
    /// When a source has too few replicates, draw pseudo-objects from its
    /// fitted coefficient model. Disable to restrict runs to real replicates.
    pub allow_resampling: bool,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::default(),
            prior: PriorPolicy::default(),
            basis: BasisConfig::default(),
            allow_resampling: true,
        }
    }
}

/// Object supply for one source: real replicates, plus a resampler when the
/// pipeline allows it and the source has enough replicates to fit a model.
struct SourceSupply<'lib> {
    source_id: &'lib str,
    spectra: &'lib [Spectrum],
    resampler: Option<Arc<SplineResampler>>,
}

impl<'lib> SourceSupply<'lib> {
    fn can_supply(&self, count: usize) -> bool {
        self.spectra.len() >= count || self.resampler.is_some()
    }

    /// Draw `count` objects: without replacement among real replicates when
    /// possible, otherwise fresh pseudo-objects from the fitted model.
    fn draw<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Spectrum>, CalibrationError> {
        if self.spectra.len() >= count {
            let mut idx: Vec<usize> = (0..self.spectra.len()).collect();
            for k in 0..count {
                let j = k + rng.random_range(0..(idx.len() - k) as u64) as usize;
                idx.swap(k, j);
            }
            return Ok(idx[..count].iter().map(|&i| self.spectra[i].clone()).collect());
        }
        let resampler = self.resampler.as_ref().ok_or_else(|| {
            CalibrationError::SourceCannotSupply {
                source_id: self.source_id.to_string(),
                needed: count,
                got: self.spectra.len(),
            }
        })?;
        Ok((0..count)
            .map(|k| resampler.draw(rng, format!("mc{k:03}")))
            .collect())
    }

    /// Draw controls only; with `force_resample` the real replicates are
    /// bypassed even when numerous enough.
    fn draw_controls<R: Rng + ?Sized>(
        &self,
        count: usize,
        force_resample: bool,
        rng: &mut R,
    ) -> Result<Vec<Spectrum>, CalibrationError> {
        if force_resample {
            if let Some(resampler) = &self.resampler {
                return Ok((0..count)
                    .map(|k| resampler.draw(rng, format!("mc{k:03}")))
                    .collect());
            }
        }
        self.draw(count, rng)
    }
}

/// Decision thresholds calibrated from same-source simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub alpha_levels: Vec<f64>,
    pub c_values: Vec<f64>,
    pub k_outer: usize,
    pub k_inner: usize,
    pub n_controls: usize,
    pub m_traces: usize,
    pub seed: u64,
    /// Raw outer statistics in iteration order (for ECDF export).
    pub h_samples: Vec<f64>,
}

impl CalibrationTable {
    /// Threshold for a level from this table, matched within `1e-12`.
    pub fn c_for(&self, alpha: f64) -> Option<f64> {
        self.alpha_levels
            .iter()
            .position(|&a| (a - alpha).abs() < 1e-12)
            .map(|i| self.c_values[i])
    }
}

/// One point of the empirical power curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    /// Kernel dissimilarity between the mean spectra of the two sources.
    pub dissimilarity: f64,
    pub h: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    /// Points sorted by dissimilarity.
    pub points: Vec<PowerPoint>,
    pub c_alpha: f64,
    pub n_controls: usize,
    pub m_traces: usize,
    pub k: usize,
    pub seed: u64,
}

/// Outcome of testing one population source against the fixed trace set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceRmpOutcome {
    pub h: f64,
    pub indistinguishable: bool,
}

/// Random-match-probability estimate for one fixed trace set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmpEstimate {
    /// `n_indistinguishable / population_size`, exactly.
    pub rmp: f64,
    pub n_indistinguishable: usize,
    pub population_size: usize,
    pub per_source: BTreeMap<String, SourceRmpOutcome>,
    pub trace_source_id: String,
    pub n_controls: usize,
    pub m_traces: usize,
    pub c_alpha: f64,
    pub k_inner: usize,
    pub seed: u64,
}

/// Interpolating sample quantile (values in, quantile out; `sorted` must be
/// ascending and nonempty).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let idx = p * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl Pipeline {
    /// Score two object sets and run the common-source test.
    pub fn run_test(
        &self,
        trace: &[Spectrum],
        control: &[Spectrum],
        k_inner: usize,
        seed: u64,
    ) -> Result<TestOutcome, CalibrationError> {
        let partition = pairwise_scores(trace, control, &self.kernel)?;
        let prior = self
            .prior
            .resolve(&partition.s_n, control.len())
            .map_err(InferenceError::from)?;
        Ok(test_statistic(
            &partition.s_m,
            &partition.s_n,
            control.len(),
            trace.len(),
            &prior,
            k_inner,
            seed,
        )?)
    }

    /// Build per-source supplies; resamplers are fitted only for sources that
    /// need them (and only when resampling is allowed or forced).
    fn supplies<'lib>(
        &self,
        library: &'lib SourceLibrary,
        needed: usize,
        force_resample: bool,
    ) -> Result<Vec<SourceSupply<'lib>>, CalibrationError> {
        let mut out = Vec::with_capacity(library.n_sources());
        let mut basis = None;
        for (source_id, spectra) in library.sources() {
            let wants_model = (force_resample || spectra.len() < needed) && spectra.len() >= 2;
            let resampler = if wants_model && (self.allow_resampling || force_resample) {
                let basis = match &basis {
                    Some(b) => b,
                    None => {
                        basis = Some(self.basis.build_for(library.grid())?);
                        basis.as_ref().unwrap()
                    }
                };
                let model = fit_spline_model(spectra, basis)?;
                Some(Arc::new(SplineResampler::new(&model)?))
            } else {
                None
            };
            out.push(SourceSupply {
                source_id,
                spectra,
                resampler,
            });
        }
        Ok(out)
    }

    /// Draw `count` objects from one source under this pipeline's supply
    /// rules (real replicates without replacement when numerous enough,
    /// resampled pseudo-objects otherwise).
    pub fn draw_objects(
        &self,
        library: &SourceLibrary,
        source_id: &str,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Spectrum>, CalibrationError> {
        let spectra = library.spectra_of(source_id)?;
        let wants_model = spectra.len() < count && spectra.len() >= 2 && self.allow_resampling;
        let resampler = if wants_model {
            let basis = self.basis.build_for(library.grid())?;
            let model = fit_spline_model(spectra, &basis)?;
            Some(Arc::new(SplineResampler::new(&model)?))
        } else {
            None
        };
        let supply = SourceSupply {
            source_id,
            spectra,
            resampler,
        };
        let mut rng = stream_rng(seed, 0);
        supply.draw(count, &mut rng)
    }

    /// Same-source statistics: per iteration, sample a source uniformly,
    /// draw disjoint trace and control sets from it, and compute `h`.
    pub fn same_source_h(
        &self,
        library: &SourceLibrary,
        n_controls: usize,
        m_traces: usize,
        k_outer: usize,
        k_inner: usize,
        seed: u64,
    ) -> Result<Vec<f64>, CalibrationError> {
        let needed = n_controls + m_traces;
        let supplies = self.supplies(library, needed, false)?;
        let eligible: Vec<&SourceSupply> =
            supplies.iter().filter(|s| s.can_supply(needed)).collect();
        if eligible.is_empty() {
            return Err(CalibrationError::NoEligibleSource {
                needed,
                resampling: if self.allow_resampling { "allowed" } else { "forbidden" },
            });
        }
        let outer_seed = child_seed(seed, STREAM_CALIBRATE);
        let inner_seed = child_seed(seed, STREAM_INNER);
        (0..k_outer as u64)
            .into_par_iter()
            .map(|it| {
                let mut rng = stream_rng(outer_seed, it);
                let src = eligible[rng.random_range(0..eligible.len() as u64) as usize];
                let objects = src.draw(needed, &mut rng)?;
                let (trace, control) = objects.split_at(m_traces);
                let outcome = self.run_test(trace, control, k_inner, child_seed(inner_seed, it))?;
                Ok(outcome.h)
            })
            .collect()
    }

    /// Calibrate the unconditional thresholds `c(alpha)`: run `k_outer`
    /// same-source tests across the library and take empirical quantiles of
    /// the statistics at each requested level.
    pub fn calibrate_c_alpha(
        &self,
        library: &SourceLibrary,
        n_controls: usize,
        m_traces: usize,
        alpha_levels: &[f64],
        k_outer: usize,
        k_inner: usize,
        seed: u64,
    ) -> Result<CalibrationTable, CalibrationError> {
        if k_outer < MIN_OUTER_ITERATIONS {
            return Err(CalibrationError::TooFewOuterIterations {
                got: k_outer,
                min: MIN_OUTER_ITERATIONS,
            });
        }
        if alpha_levels.is_empty() {
            return Err(CalibrationError::EmptyAlphaGrid);
        }
        for &a in alpha_levels {
            if !(a > 0.0 && a < 1.0) {
                return Err(CalibrationError::InvalidLevel {
                    what: "alpha",
                    value: a,
                });
            }
        }
        let mut alphas = alpha_levels.to_vec();
        alphas.sort_by(f64::total_cmp);

        let h_samples = self.same_source_h(library, n_controls, m_traces, k_outer, k_inner, seed)?;
        let mut sorted = h_samples.clone();
        sorted.sort_by(f64::total_cmp);
        let c_values = alphas.iter().map(|&a| quantile_sorted(&sorted, a)).collect();

        Ok(CalibrationTable {
            alpha_levels: alphas,
            c_values,
            k_outer,
            k_inner,
            n_controls,
            m_traces,
            seed,
            h_samples,
        })
    }

    /// Empirical power study: per iteration, sample a trace source and a
    /// control source independently (equal allowed, anchoring the curve at
    /// zero dissimilarity), test, and record the pair's mean-spectrum
    /// dissimilarity. Points come back sorted by dissimilarity.
    pub fn power_curve(
        &self,
        library: &SourceLibrary,
        n_controls: usize,
        m_traces: usize,
        c_alpha: f64,
        k: usize,
        seed: u64,
    ) -> Result<PowerCurve, CalibrationError> {
        if library.n_sources() < 2 {
            return Err(CalibrationError::TooFewSources(library.n_sources()));
        }
        if !(0.0..=1.0).contains(&c_alpha) {
            return Err(CalibrationError::InvalidLevel {
                what: "c_alpha",
                value: c_alpha,
            });
        }
        let needed = n_controls + m_traces;
        let supplies = self.supplies(library, needed, false)?;
        let eligible: Vec<&SourceSupply> =
            supplies.iter().filter(|s| s.can_supply(needed)).collect();
        if eligible.len() < 2 {
            return Err(CalibrationError::NoEligibleSource {
                needed,
                resampling: if self.allow_resampling { "allowed" } else { "forbidden" },
            });
        }
        let mean_spectra: BTreeMap<&str, Spectrum> = eligible
            .iter()
            .map(|s| Ok((s.source_id, library.mean_spectrum(s.source_id)?)))
            .collect::<Result<_, CalibrationError>>()?;

        let outer_seed = child_seed(seed, STREAM_POWER);
        let inner_seed = child_seed(seed, STREAM_INNER);
        let mut points: Vec<PowerPoint> = (0..k as u64)
            .into_par_iter()
            .map(|it| {
                let mut rng = stream_rng(outer_seed, it);
                let trace_src = eligible[rng.random_range(0..eligible.len() as u64) as usize];
                let control_src = eligible[rng.random_range(0..eligible.len() as u64) as usize];
                let (trace, control) = if trace_src.source_id == control_src.source_id {
                    let objects = trace_src.draw(needed, &mut rng)?;
                    let (t, c) = objects.split_at(m_traces);
                    (t.to_vec(), c.to_vec())
                } else {
                    let t = trace_src.draw(m_traces, &mut rng)?;
                    let c = control_src.draw(n_controls, &mut rng)?;
                    (t, c)
                };
                let dissimilarity = kernel_score(
                    &mean_spectra[trace_src.source_id],
                    &mean_spectra[control_src.source_id],
                    &self.kernel,
                )?;
                let outcome =
                    self.run_test(&trace, &control, k, child_seed(inner_seed, it))?;
                Ok(PowerPoint {
                    dissimilarity,
                    h: outcome.h,
                    rejected: outcome.h <= c_alpha,
                })
            })
            .collect::<Result<_, CalibrationError>>()?;
        points.sort_by(|a, b| a.dissimilarity.total_cmp(&b.dissimilarity));

        Ok(PowerCurve {
            points,
            c_alpha,
            n_controls,
            m_traces,
            k,
            seed,
        })
    }

    /// Random match probability of a fixed trace set: test it against every
    /// library source except the excluded one, at the calibrated threshold.
    #[allow(clippy::too_many_arguments)]
    pub fn estimate_rmp(
        &self,
        trace: &[Spectrum],
        library: &SourceLibrary,
        excluded_source: &str,
        n_controls: usize,
        c_alpha: f64,
        k_inner: usize,
        seed: u64,
        resample_controls: bool,
    ) -> Result<RmpEstimate, CalibrationError> {
        if !(0.0..=1.0).contains(&c_alpha) {
            return Err(CalibrationError::InvalidLevel {
                what: "c_alpha",
                value: c_alpha,
            });
        }
        let supplies = self.supplies(library, n_controls, resample_controls)?;
        let population: Vec<&SourceSupply> = supplies
            .iter()
            .filter(|s| s.source_id != excluded_source)
            .collect();
        if population.is_empty() {
            return Err(CalibrationError::TooFewSources(1));
        }
        for s in &population {
            if !s.can_supply(n_controls) {
                return Err(CalibrationError::SourceCannotSupply {
                    source_id: s.source_id.to_string(),
                    needed: n_controls,
                    got: s.spectra.len(),
                });
            }
        }

        let outer_seed = child_seed(seed, STREAM_RMP);
        let inner_seed = child_seed(seed, STREAM_INNER);
        let outcomes: Vec<(String, SourceRmpOutcome)> = population
            .par_iter()
            .enumerate()
            .map(|(idx, src)| {
                let mut rng = stream_rng(outer_seed, idx as u64);
                let controls = src.draw_controls(n_controls, resample_controls, &mut rng)?;
                let outcome =
                    self.run_test(trace, &controls, k_inner, child_seed(inner_seed, idx as u64))?;
                Ok((
                    src.source_id.to_string(),
                    SourceRmpOutcome {
                        h: outcome.h,
                        indistinguishable: outcome.h > c_alpha,
                    },
                ))
            })
            .collect::<Result<_, CalibrationError>>()?;

        let n_indistinguishable = outcomes.iter().filter(|(_, o)| o.indistinguishable).count();
        let population_size = outcomes.len();
        Ok(RmpEstimate {
            rmp: n_indistinguishable as f64 / population_size as f64,
            n_indistinguishable,
            population_size,
            per_source: outcomes.into_iter().collect(),
            trace_source_id: excluded_source.to_string(),
            n_controls,
            m_traces: trace.len(),
            c_alpha,
            k_inner,
            seed,
        })
    }

    /// Within-source score-normality diagnostics over disjoint replicate
    /// groups (see [`DiagnosticsReport`]).
    pub fn normality_diagnostics(
        &self,
        library: &SourceLibrary,
        group_size: usize,
    ) -> Result<DiagnosticsReport, CalibrationError> {
        if group_size < 2 {
            return Err(CalibrationError::GroupSizeTooSmall(group_size));
        }
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut groups_per_source = BTreeMap::new();
        for (source_id, spectra) in library.sources() {
            let n_groups = spectra.len() / group_size;
            if n_groups < 2 {
                return Err(CalibrationError::InsufficientGroups {
                    source_id: source_id.clone(),
                    got: spectra.len(),
                    needed: 2 * group_size,
                    groups: n_groups,
                    group_size,
                });
            }
            for g in 0..n_groups {
                let group = &spectra[g * group_size..(g + 1) * group_size];
                let mut scores = Vec::with_capacity(group_size * (group_size - 1) / 2);
                for i in 0..group_size {
                    for j in (i + 1)..group_size {
                        scores.push(kernel_score(&group[i], &group[j], &self.kernel)?);
                    }
                }
                rows.push(DVector::from_vec(scores));
            }
            groups_per_source.insert(source_id.clone(), n_groups);
        }
        diagnostics::build_report(&rows, group_size, groups_per_source)
    }
}
