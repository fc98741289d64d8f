//! Spectra ingestion, per-source smoothing models, resampling and synthetic
//! library generation.
//!
//! A [`Spectrum`] is one observation: a strictly increasing wavenumber grid
//! plus absorbance values. A [`SourceLibrary`] groups replicate spectra by
//! source over one shared grid. Per-source [`SplineSourceModel`]s treat the
//! spectra as functional data — each spectrum becomes a coefficient vector
//! on a B-spline basis, and the source is summarized by the sample mean and
//! covariance of those coefficients, which supports resampling new
//! pseudo-spectra on demand.

mod basis;
mod io;
mod model;
mod synthetic;

pub use basis::{evaluate_basis, BasisConfig, BsplineBasis};
pub use io::{read_library, write_library, LibraryFormat};
pub use model::{fit_spline_model, resample_spectra, SplineResampler, SplineSourceModel};
pub use synthetic::{generate_synthetic_library, SyntheticConfig};

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum SpectraError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("no spectra")]
    NoSpectra,

    #[error("duplicate spectrum for source '{source_id}' replicate '{replicate_id}'")]
    DuplicateReplicate {
        source_id: String,
        replicate_id: String,
    },

    #[error("grid mismatch: {detail}")]
    GridMismatch { detail: String },

    #[error("invalid spectrum ({source_id}:{replicate_id}): {message}")]
    InvalidSpectrum {
        source_id: String,
        replicate_id: String,
        message: String,
    },

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("grid point {x} lies outside the knot span [{lo}, {hi}]")]
    OutsideKnotSpan { x: f64, lo: f64, hi: f64 },

    #[error(
        "basis matrix is rank-deficient (|r_min|/|r_max| = {ratio:e}); \
         too many basis functions for this grid"
    )]
    RankDeficientBasis { ratio: f64 },

    #[error("need at least {needed} replicates, got {got}")]
    TooFewReplicates { needed: usize, got: usize },

    #[error("coefficient covariance is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    IndefiniteCovariance { eigenvalue: f64 },

    #[error("source '{0}' not found in the library")]
    UnknownSource(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// One observed spectrum on a wavenumber grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: Arc<Vec<f64>>,
    values: Vec<f64>,
    source_id: String,
    replicate_id: String,
}

impl Spectrum {
    pub fn new(
        grid: Arc<Vec<f64>>,
        values: Vec<f64>,
        source_id: impl Into<String>,
        replicate_id: impl Into<String>,
    ) -> Result<Self, SpectraError> {
        let source_id = source_id.into();
        let replicate_id = replicate_id.into();
        let invalid = |message: String| SpectraError::InvalidSpectrum {
            source_id: source_id.clone(),
            replicate_id: replicate_id.clone(),
            message,
        };
        if grid.len() < 2 {
            return Err(invalid(format!("grid has {} points, need at least 2", grid.len())));
        }
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        for w in grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(invalid(format!(
                    "grid not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(bad) = grid.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite wavenumber {bad}")));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite absorbance {bad}")));
        }
        Ok(Self {
            grid,
            values,
            source_id,
            replicate_id,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Vec<f64>> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn replicate_id(&self) -> &str {
        &self.replicate_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grids are shared whenever they compare equal; pointer equality is the
    /// common fast path inside one library.
    pub fn same_grid(&self, other: &Spectrum) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }
}

/// Replicate spectra grouped by source over one shared grid.
#[derive(Debug, Clone)]
pub struct SourceLibrary {
    grid: Arc<Vec<f64>>,
    sources: BTreeMap<String, Vec<Spectrum>>,
}

impl SourceLibrary {
    /// Assemble a library from spectra, validating the shared grid and
    /// rejecting duplicate (source, replicate) pairs. Replicates are kept in
    /// replicate-id order so downstream selection is deterministic.
    pub fn from_spectra(spectra: Vec<Spectrum>) -> Result<Self, SpectraError> {
        let mut iter = spectra.into_iter();
        let first = iter.next().ok_or(SpectraError::NoSpectra)?;
        let grid = Arc::clone(&first.grid);
        let mut sources: BTreeMap<String, Vec<Spectrum>> = BTreeMap::new();
        for sp in std::iter::once(first).chain(iter) {
            if !(Arc::ptr_eq(&sp.grid, &grid) || *sp.grid == *grid) {
                return Err(SpectraError::GridMismatch {
                    detail: format!(
                        "spectrum {}:{} does not share the library grid",
                        sp.source_id, sp.replicate_id
                    ),
                });
            }
            let entry = sources.entry(sp.source_id.clone()).or_default();
            if entry.iter().any(|s| s.replicate_id == sp.replicate_id) {
                return Err(SpectraError::DuplicateReplicate {
                    source_id: sp.source_id,
                    replicate_id: sp.replicate_id,
                });
            }
            entry.push(sp);
        }
        for reps in sources.values_mut() {
            reps.sort_by(|a, b| a.replicate_id.cmp(&b.replicate_id));
        }
        Ok(Self { grid, sources })
    }

    /// Add one source's replicates (grid-checked, duplicates rejected).
    pub fn insert_source(
        &mut self,
        source_id: impl Into<String>,
        spectra: Vec<Spectrum>,
    ) -> Result<(), SpectraError> {
        let source_id = source_id.into();
        if spectra.is_empty() {
            return Err(SpectraError::NoSpectra);
        }
        if self.sources.contains_key(&source_id) {
            return Err(SpectraError::DuplicateReplicate {
                source_id,
                replicate_id: "*".into(),
            });
        }
        let mut reps = Vec::with_capacity(spectra.len());
        for mut sp in spectra {
            if !(Arc::ptr_eq(&sp.grid, &self.grid) || *sp.grid == *self.grid) {
                return Err(SpectraError::GridMismatch {
                    detail: format!(
                        "spectrum {}:{} does not share the library grid",
                        sp.source_id, sp.replicate_id
                    ),
                });
            }
            sp.source_id = source_id.clone();
            sp.grid = Arc::clone(&self.grid);
            if reps
                .iter()
                .any(|s: &Spectrum| s.replicate_id == sp.replicate_id)
            {
                return Err(SpectraError::DuplicateReplicate {
                    source_id,
                    replicate_id: sp.replicate_id,
                });
            }
            reps.push(sp);
        }
        reps.sort_by(|a, b| a.replicate_id.cmp(&b.replicate_id));
        self.sources.insert(source_id, reps);
        Ok(())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Vec<f64>> {
        &self.grid
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_spectra(&self) -> usize {
        self.sources.values().map(Vec::len).sum()
    }

    pub fn source_ids(&self) -> impl Iterator<Item = &str> {
        self.sources.keys().map(String::as_str)
    }

    pub fn sources(&self) -> &BTreeMap<String, Vec<Spectrum>> {
        &self.sources
    }

    pub fn spectra_of(&self, source_id: &str) -> Result<&[Spectrum], SpectraError> {
        self.sources
            .get(source_id)
            .map(Vec::as_slice)
            .ok_or_else(|| SpectraError::UnknownSource(source_id.to_string()))
    }

    /// Pointwise mean spectrum of a source's replicates.
    pub fn mean_spectrum(&self, source_id: &str) -> Result<Spectrum, SpectraError> {
        let reps = self.spectra_of(source_id)?;
        let n = reps.len() as f64;
        let mut values = vec![0.0; self.grid.len()];
        for sp in reps {
            for (acc, v) in values.iter_mut().zip(sp.values()) {
                *acc += v;
            }
        }
        for v in &mut values {
            *v /= n;
        }
        Spectrum::new(Arc::clone(&self.grid), values, source_id, "mean")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<Vec<f64>> {
        Arc::new((0..n).map(|i| 500.0 + i as f64).collect())
    }

    #[test]
    fn spectrum_validation() {
        let g = grid(8);
        assert!(Spectrum::new(Arc::clone(&g), vec![0.0; 8], "s", "r").is_ok());
        assert!(Spectrum::new(Arc::clone(&g), vec![0.0; 7], "s", "r").is_err());
        assert!(Spectrum::new(
            Arc::new(vec![1.0, 1.0, 2.0]),
            vec![0.0; 3],
            "s",
            "r"
        )
        .is_err());
        let mut vals = vec![0.0; 8];
        vals[3] = f64::NAN;
        assert!(Spectrum::new(g, vals, "s", "r").is_err());
    }

    #[test]
    fn library_rejects_duplicates_and_grid_mismatch() {
        let g = grid(8);
        let a = Spectrum::new(Arc::clone(&g), vec![1.0; 8], "s1", "r1").unwrap();
        let b = Spectrum::new(Arc::clone(&g), vec![2.0; 8], "s1", "r1").unwrap();
        assert!(matches!(
            SourceLibrary::from_spectra(vec![a.clone(), b]),
            Err(SpectraError::DuplicateReplicate { .. })
        ));

        let other = Spectrum::new(grid(9), vec![0.0; 9], "s2", "r1").unwrap();
        assert!(matches!(
            SourceLibrary::from_spectra(vec![a, other]),
            Err(SpectraError::GridMismatch { .. })
        ));

        assert!(matches!(
            SourceLibrary::from_spectra(vec![]),
            Err(SpectraError::NoSpectra)
        ));
    }

    #[test]
    fn replicates_sorted_by_id() {
        let g = grid(4);
        let mk = |r: &str| Spectrum::new(Arc::clone(&g), vec![0.0; 4], "s", r).unwrap();
        let lib = SourceLibrary::from_spectra(vec![mk("r3"), mk("r1"), mk("r2")]).unwrap();
        let ids: Vec<&str> = lib.spectra_of("s").unwrap().iter().map(|s| s.replicate_id()).collect();
        assert_eq!(ids, ["r1", "r2", "r3"]);
    }

    #[test]
    fn mean_spectrum_averages_pointwise() {
        let g = grid(4);
        let a = Spectrum::new(Arc::clone(&g), vec![1.0, 2.0, 3.0, 4.0], "s", "r1").unwrap();
        let b = Spectrum::new(Arc::clone(&g), vec![3.0, 2.0, 1.0, 0.0], "s", "r2").unwrap();
        let lib = SourceLibrary::from_spectra(vec![a, b]).unwrap();
        let m = lib.mean_spectrum("s").unwrap();
        assert_eq!(m.values(), &[2.0, 2.0, 2.0, 2.0]);
    }
}
