//! Run configuration: one JSON document per run, merged with command-line
//! flag overrides. Every field the engine consumes appears here, so the
//! manifest of a run captures the complete tunable state.

use std::path::Path;

use kscore::kernel::KernelSpec;
use kscore::posterior::PriorPolicy;
use kscore::spectra::{BasisConfig, LibraryFormat, SyntheticConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub n_controls: Option<usize>,
    pub m_traces: Option<usize>,
    pub k_inner: Option<usize>,
    pub k_outer: Option<usize>,
    pub alpha: Option<f64>,
    pub alpha_levels: Option<Vec<f64>>,
    pub c_alpha: Option<f64>,
    pub kernel: Option<KernelSpec>,
    pub prior: Option<PriorPolicy>,
    pub basis: Option<BasisConfig>,
    pub allow_resampling: Option<bool>,
    pub synthetic: Option<SyntheticConfig>,
    pub repetitions: Option<usize>,
    pub group_size: Option<usize>,
    pub format: Option<LibraryFormat>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))
    }
}

/// Parse a comma-separated list of numbers from a flag value.
pub fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| CliError::input(format!("invalid {what} '{s}': {e}")))
        })
        .collect()
}
