//! Command-line front end: ingestion, synthetic libraries, the common-source
//! test, threshold calibration, power studies, match-probability estimation
//! and score diagnostics, wired into reproducible seeded runs.
//!
//! Exit codes: 0 success, 2 input error, 3 missing prerequisite, 4 numeric
//! failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kscore::spectra::LibraryFormat;

/// Error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<kscore::SpectraError> for CliError {
    fn from(e: kscore::SpectraError) -> Self {
        use kscore::SpectraError::*;
        match e {
            RankDeficientBasis { .. } | IndefiniteCovariance { .. } => Self::numeric(e.to_string()),
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<kscore::KernelError> for CliError {
    fn from(e: kscore::KernelError) -> Self {
        fn code(e: &kscore::KernelError) -> u8 {
            use kscore::KernelError::*;
            match e {
                DegenerateMask { .. } | ZeroVariance { .. } | InsufficientOverlap { .. } => 4,
                AtPair { source, .. } => code(source),
                _ => 2,
            }
        }
        Self {
            code: code(&e),
            message: e.to_string(),
        }
    }
}

impl From<kscore::InferenceError> for CliError {
    fn from(e: kscore::InferenceError) -> Self {
        use kscore::InferenceError::*;
        match &e {
            NotPositiveDefinite { .. } => Self::numeric(e.to_string()),
            Posterior(kscore::PosteriorError::ExcessiveRejection { .. }) => {
                Self::numeric(e.to_string())
            }
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<kscore::CalibrationError> for CliError {
    fn from(e: kscore::CalibrationError) -> Self {
        use kscore::CalibrationError::*;
        match e {
            Kernel(inner) => inner.into(),
            Spectra(inner) => inner.into(),
            Inference(inner) => inner.into(),
            other => Self::input(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    LongCsv,
    WideCsv,
}

impl From<FormatArg> for LibraryFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::LongCsv => LibraryFormat::LongCsv,
            FormatArg::WideCsv => LibraryFormat::WideCsv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceModeArg {
    /// The first M replicates of the trace source, fixed across repetitions.
    Fixed,
    /// A fresh trace sample per repetition.
    Random,
}

#[derive(Parser)]
#[command(
    name = "kscore",
    version,
    about = "Kernel-score common-source testing and match-probability estimation for spectral libraries"
)]
struct Cli {
    /// JSON run configuration; flags override individual fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker-thread cap (results are identical at any setting).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a spectra file and print a library summary as JSON.
    Ingest {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Generate a synthetic source library and write it to a spectra file.
    Simulate {
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        sources: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        grid_len: Option<usize>,
        #[arg(long)]
        grid_min: Option<f64>,
        #[arg(long)]
        grid_max: Option<f64>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Test whether trace and control spectra share a common source.
    Test {
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
        #[arg(long, value_name = "PATH")]
        control: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Decision threshold; alternatively load it from --calibration.
        #[arg(long)]
        c_alpha: Option<f64>,
        /// Calibration JSON produced by `kscore calibrate`.
        #[arg(long, value_name = "PATH")]
        calibration: Option<PathBuf>,
        /// Test level used to look up and report the threshold.
        #[arg(long)]
        alpha: Option<f64>,
        /// Inner Monte Carlo iterations.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the outcome JSON to this file.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Dump the parameter posterior draws to CSV (diagnostics).
        #[arg(long, value_name = "PATH")]
        dump_posterior: Option<PathBuf>,
        /// Dump the pairwise scores to CSV (i,j,role_i,role_j,block,score).
        #[arg(long, value_name = "PATH")]
        dump_scores: Option<PathBuf>,
        /// Dump the closed-form parameter point estimates to JSON.
        #[arg(long, value_name = "PATH")]
        dump_estimates: Option<PathBuf>,
    },
    /// Calibrate decision thresholds c(alpha) from same-source simulations.
    Calibrate {
        #[arg(long, value_name = "PATH")]
        library: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Control-object counts, comma-separated (one table row each).
        #[arg(long, value_name = "N1,N2,...")]
        n: Option<String>,
        #[arg(long)]
        m: Option<usize>,
        /// Alpha levels, comma-separated.
        #[arg(long, value_name = "A1,A2,...")]
        alphas: Option<String>,
        #[arg(long)]
        k_outer: Option<usize>,
        #[arg(long)]
        k_inner: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "PATH")]
        output_csv: PathBuf,
        #[arg(long, value_name = "PATH")]
        output_json: PathBuf,
        /// Forbid resampling; only sources with enough replicates are used.
        #[arg(long)]
        no_resampling: bool,
    },
    /// Estimate the empirical power curve of the test over a library.
    Power {
        #[arg(long, value_name = "PATH")]
        library: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        c_alpha: Option<f64>,
        #[arg(long, value_name = "PATH")]
        calibration: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Outer iterations (also used for the inner loop).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        #[arg(long)]
        no_resampling: bool,
    },
    /// Estimate the random match probability of a trace set over a library.
    Rmp {
        #[arg(long, value_name = "PATH")]
        library: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Source the trace objects are taken from (excluded from the
        /// population).
        #[arg(long)]
        trace_source: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        c_alpha: Option<f64>,
        #[arg(long, value_name = "PATH")]
        calibration: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        k_inner: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long, value_enum, default_value = "fixed")]
        trace_mode: TraceModeArg,
        /// Sample controls from real replicates instead of resampling.
        #[arg(long)]
        use_replicates: bool,
        #[arg(long, value_name = "PATH")]
        output_csv: PathBuf,
        #[arg(long, value_name = "PATH")]
        output_json: PathBuf,
    },
    /// Score-normality diagnostics over within-source replicate groups.
    Diagnose {
        #[arg(long, value_name = "PATH")]
        library: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let run_config = match config::RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.code);
        }
    };
    let result = commands::dispatch(cli.command, run_config, cli.threads);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
