//! Synthetic source libraries for desk-scale validation.
//!
//! Each source is a distinct smooth template (a shared base of Gaussian
//! peaks plus a source-specific peak deviation) and replicates add small
//! smooth perturbations. One separation knob scales every source's
//! deviation, so inter-source kernel dissimilarity grows monotonically with
//! it and collapses to zero when the knob is zero. Sources additionally get
//! a log-uniform spread factor on their deviation so a single library spans
//! a range of inter-source distances (useful for power studies).

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SourceLibrary, SpectraError, Spectrum};
use crate::rng::{child_seed, stream_rng};

const BASE_PEAKS: usize = 12;
const DEVIATION_PEAKS: usize = 6;
const REPLICATE_BUMPS: usize = 4;
const SPREAD_MIN: f64 = 0.15;
const SPREAD_MAX: f64 = 1.0;

const STREAM_BASE: u64 = 0;
const STREAM_SOURCE: u64 = 1;
const STREAM_REPLICATE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_sources: usize,
    pub n_replicates: usize,
    pub grid_len: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    /// Scales every source's deviation from the shared base template.
    pub separation: f64,
    /// Amplitude of the smooth within-source perturbation.
    pub within_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_sources: 20,
            n_replicates: 7,
            grid_len: 500,
            grid_min: 550.0,
            grid_max: 4000.0,
            separation: 1.0,
            within_noise: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SpectraError> {
        if self.n_sources == 0 || self.n_replicates == 0 {
            return Err(SpectraError::InvalidConfig(
                "n_sources and n_replicates must be positive".into(),
            ));
        }
        if self.grid_len < 2 {
            return Err(SpectraError::InvalidConfig("grid_len must be at least 2".into()));
        }
        if !(self.grid_min < self.grid_max) {
            return Err(SpectraError::InvalidConfig(format!(
                "grid_min ({}) must be below grid_max ({})",
                self.grid_min, self.grid_max
            )));
        }
        if !(self.separation >= 0.0) || !(self.within_noise >= 0.0) {
            return Err(SpectraError::InvalidConfig(
                "separation and within_noise must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

struct Peak {
    center: f64,
    width: f64,
    amplitude: f64,
}

fn draw_peaks<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    lo: f64,
    hi: f64,
    amp_lo: f64,
    amp_hi: f64,
    width_lo: f64,
    width_hi: f64,
    signed: bool,
) -> Vec<Peak> {
    let span = hi - lo;
    (0..count)
        .map(|_| {
            let center = lo + span * rng.random::<f64>();
            let width = span * (width_lo + (width_hi - width_lo) * rng.random::<f64>());
            let mut amplitude = amp_lo + (amp_hi - amp_lo) * rng.random::<f64>();
            if signed && rng.random::<f64>() < 0.5 {
                amplitude = -amplitude;
            }
            Peak {
                center,
                width,
                amplitude,
            }
        })
        .collect()
}

fn add_peaks(values: &mut [f64], grid: &[f64], peaks: &[Peak], scale: f64) {
    if scale == 0.0 {
        return;
    }
    for peak in peaks {
        let inv = 1.0 / (2.0 * peak.width * peak.width);
        for (v, &x) in values.iter_mut().zip(grid) {
            let d = x - peak.center;
            *v += scale * peak.amplitude * (-d * d * inv).exp();
        }
    }
}

/// Generate a deterministic synthetic library. Identical `(config, seed)`
/// reproduce the same library; the random draws do not depend on
/// `separation` or `within_noise`, so those knobs rescale a fixed geometry.
pub fn generate_synthetic_library(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<SourceLibrary, SpectraError> {
    config.validate()?;
    let n = config.grid_len;
    let grid: Arc<Vec<f64>> = Arc::new(
        (0..n)
            .map(|i| {
                config.grid_min
                    + (config.grid_max - config.grid_min) * i as f64 / (n - 1) as f64
            })
            .collect(),
    );
    let (lo, hi) = (config.grid_min, config.grid_max);

    let mut base_rng = stream_rng(child_seed(seed, STREAM_BASE), 0);
    let base_peaks = draw_peaks(&mut base_rng, BASE_PEAKS, lo, hi, 0.3, 1.0, 0.015, 0.06, false);
    let mut base = vec![0.0; n];
    add_peaks(&mut base, &grid, &base_peaks, 1.0);

    let mut spectra = Vec::with_capacity(config.n_sources * config.n_replicates);
    for i in 0..config.n_sources {
        let mut src_rng = stream_rng(child_seed(seed, STREAM_SOURCE), i as u64);
        let spread = (SPREAD_MIN.ln()
            + (SPREAD_MAX.ln() - SPREAD_MIN.ln()) * src_rng.random::<f64>())
        .exp();
        let deviation = draw_peaks(&mut src_rng, DEVIATION_PEAKS, lo, hi, 0.2, 0.6, 0.01, 0.05, true);

        let mut template = base.clone();
        add_peaks(&mut template, &grid, &deviation, config.separation * spread);

        let rep_seed = child_seed(child_seed(seed, STREAM_REPLICATE), i as u64);
        for r in 0..config.n_replicates {
            let mut rep_rng = stream_rng(rep_seed, r as u64);
            let bumps: Vec<Peak> = (0..REPLICATE_BUMPS)
                .map(|_| {
                    let center = lo + (hi - lo) * rep_rng.random::<f64>();
                    let width = (hi - lo) * (0.03 + 0.07 * rep_rng.random::<f64>());
                    let amplitude: f64 = rep_rng.sample(StandardNormal);
                    Peak {
                        center,
                        width,
                        amplitude,
                    }
                })
                .collect();
            let mut values = template.clone();
            add_peaks(&mut values, &grid, &bumps, config.within_noise);
            spectra.push(Spectrum::new(
                Arc::clone(&grid),
                values,
                format!("src{i:04}"),
                format!("rep{r:03}"),
            )?);
        }
    }
    SourceLibrary::from_spectra(spectra)
}
