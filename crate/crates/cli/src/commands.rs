//! Command implementations. Each file-producing command resolves its full
//! configuration (config file, then flag overrides, then defaults), runs the
//! engine, writes its outputs, and records a manifest next to the primary
//! output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kscore::calibration::{CalibrationTable, Pipeline};
use kscore::inference::TestOutcome;
use kscore::rng::child_seed;
use kscore::spectra::{
    generate_synthetic_library, read_library, write_library, LibraryFormat, SourceLibrary,
    Spectrum, SyntheticConfig,
};
use serde_json::json;

use crate::config::{parse_list, RunConfig};
use crate::manifest::Manifest;
use crate::{CliError, Command, FormatArg, TraceModeArg};

const DEFAULT_K_INNER: usize = 2000;
const DEFAULT_K_OUTER: usize = 2000;
const DEFAULT_ALPHA: f64 = 0.05;
const DEFAULT_ALPHA_LEVELS: [f64; 7] = [0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95];

pub fn dispatch(command: Command, config: RunConfig, threads: Option<usize>) -> Result<(), CliError> {
    match command {
        Command::Ingest { input, format } => ingest(&input, resolve_format(format, &config)),
        Command::Simulate {
            output,
            format,
            sources,
            replicates,
            grid_len,
            grid_min,
            grid_max,
            separation,
            noise,
            seed,
        } => {
            let mut synthetic = config.synthetic.unwrap_or_default();
            if let Some(v) = sources {
                synthetic.n_sources = v;
            }
            if let Some(v) = replicates {
                synthetic.n_replicates = v;
            }
            if let Some(v) = grid_len {
                synthetic.grid_len = v;
            }
            if let Some(v) = grid_min {
                synthetic.grid_min = v;
            }
            if let Some(v) = grid_max {
                synthetic.grid_max = v;
            }
            if let Some(v) = separation {
                synthetic.separation = v;
            }
            if let Some(v) = noise {
                synthetic.within_noise = v;
            }
            let seed = seed.or(config.seed).unwrap_or(0);
            simulate(
                &output,
                resolve_format(format, &config),
                &synthetic,
                seed,
                threads,
            )
        }
        Command::Test {
            trace,
            control,
            format,
            c_alpha,
            calibration,
            alpha,
            k,
            seed,
            output,
            dump_posterior,
            dump_scores,
            dump_estimates,
        } => {
            let args = TestArgs {
                trace,
                control,
                format: resolve_format(format, &config),
                c_alpha: c_alpha.or(config.c_alpha),
                calibration,
                alpha: alpha.or(config.alpha).unwrap_or(DEFAULT_ALPHA),
                k: k.or(config.k_inner).unwrap_or(DEFAULT_K_INNER),
                seed: seed.or(config.seed).unwrap_or(0),
                output,
                dump_posterior,
                dump_scores,
                dump_estimates,
            };
            test(&args, &config)
        }
        Command::Calibrate {
            library,
            format,
            n,
            m,
            alphas,
            k_outer,
            k_inner,
            seed,
            output_csv,
            output_json,
            no_resampling,
        } => {
            let n_values: Vec<usize> = match n {
                Some(raw) => parse_list(&raw, "control count")?,
                None => vec![config.n_controls.ok_or_else(|| {
                    CliError::input("supply --n or set n_controls in the config")
                })?],
            };
            let alpha_levels: Vec<f64> = match alphas {
                Some(raw) => parse_list(&raw, "alpha level")?,
                None => config
                    .alpha_levels
                    .clone()
                    .unwrap_or_else(|| DEFAULT_ALPHA_LEVELS.to_vec()),
            };
            let args = CalibrateArgs {
                library,
                format: resolve_format(format, &config),
                n_values,
                m_traces: m.or(config.m_traces).unwrap_or(3),
                alpha_levels,
                k_outer: k_outer.or(config.k_outer).unwrap_or(DEFAULT_K_OUTER),
                k_inner: k_inner.or(config.k_inner).unwrap_or(DEFAULT_K_INNER),
                seed: seed.or(config.seed).unwrap_or(0),
                output_csv,
                output_json,
            };
            calibrate(&args, pipeline_from(&config, no_resampling), threads)
        }
        Command::Power {
            library,
            format,
            n,
            m,
            c_alpha,
            calibration,
            alpha,
            k,
            seed,
            output,
            no_resampling,
        } => {
            let n_controls = n
                .or(config.n_controls)
                .ok_or_else(|| CliError::input("supply --n or set n_controls in the config"))?;
            let m_traces = m.or(config.m_traces).unwrap_or(3);
            let alpha_level = alpha.or(config.alpha).unwrap_or(DEFAULT_ALPHA);
            let threshold = resolve_threshold(
                c_alpha.or(config.c_alpha),
                calibration.as_deref(),
                alpha_level,
                n_controls,
                m_traces,
            )?;
            let args = PowerArgs {
                library,
                format: resolve_format(format, &config),
                n_controls,
                m_traces,
                c_alpha: threshold,
                k: k.or(config.k_outer).unwrap_or(DEFAULT_K_OUTER),
                seed: seed.or(config.seed).unwrap_or(0),
                output,
            };
            power(&args, pipeline_from(&config, no_resampling), threads)
        }
        Command::Rmp {
            library,
            format,
            trace_source,
            n,
            m,
            c_alpha,
            calibration,
            alpha,
            k_inner,
            seed,
            repetitions,
            trace_mode,
            use_replicates,
            output_csv,
            output_json,
        } => {
            let n_controls = n
                .or(config.n_controls)
                .ok_or_else(|| CliError::input("supply --n or set n_controls in the config"))?;
            let m_traces = m.or(config.m_traces).unwrap_or(3);
            let alpha_level = alpha.or(config.alpha).unwrap_or(DEFAULT_ALPHA);
            let threshold = resolve_threshold(
                c_alpha.or(config.c_alpha),
                calibration.as_deref(),
                alpha_level,
                n_controls,
                m_traces,
            )?;
            let args = RmpArgs {
                library,
                format: resolve_format(format, &config),
                trace_source,
                n_controls,
                m_traces,
                c_alpha: threshold,
                k_inner: k_inner.or(config.k_inner).unwrap_or(DEFAULT_K_INNER),
                seed: seed.or(config.seed).unwrap_or(0),
                repetitions: repetitions.or(config.repetitions).unwrap_or(20),
                trace_mode,
                resample_controls: !use_replicates,
                output_csv,
                output_json,
            };
            rmp(&args, pipeline_from(&config, false), threads)
        }
        Command::Diagnose {
            library,
            format,
            group_size,
            output,
        } => {
            let args = DiagnoseArgs {
                library,
                format: resolve_format(format, &config),
                group_size: group_size.or(config.group_size).unwrap_or(3),
                output,
            };
            diagnose(&args, pipeline_from(&config, false), threads)
        }
    }
}

fn resolve_format(flag: Option<FormatArg>, config: &RunConfig) -> LibraryFormat {
    flag.map(LibraryFormat::from)
        .or(config.format)
        .unwrap_or(LibraryFormat::LongCsv)
}

fn pipeline_from(config: &RunConfig, no_resampling: bool) -> Pipeline {
    Pipeline {
        kernel: config.kernel.unwrap_or_default(),
        prior: config.prior.unwrap_or_default(),
        basis: config.basis.unwrap_or_default(),
        allow_resampling: if no_resampling {
            false
        } else {
            config.allow_resampling.unwrap_or(true)
        },
    }
}

fn load(path: &Path, format: LibraryFormat) -> Result<SourceLibrary, CliError> {
    read_library(path, format).map_err(|e| {
        let mut err: CliError = e.into();
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

/// All spectra of a library in canonical (source, replicate) order.
fn flatten(library: &SourceLibrary) -> Vec<Spectrum> {
    library
        .sources()
        .values()
        .flat_map(|reps| reps.iter().cloned())
        .collect()
}

fn resolve_threshold(
    c_alpha: Option<f64>,
    calibration: Option<&Path>,
    alpha: f64,
    n_controls: usize,
    m_traces: usize,
) -> Result<f64, CliError> {
    if let Some(c) = c_alpha {
        if !(0.0..=1.0).contains(&c) {
            return Err(CliError::input(format!("c_alpha {c} must lie in [0, 1]")));
        }
        return Ok(c);
    }
    let Some(path) = calibration else {
        return Err(CliError::missing(
            "no decision threshold: pass --c-alpha, or pass --calibration with a file \
             produced by `kscore calibrate`",
        ));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let tables: Vec<CalibrationTable> = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("invalid calibration file {}: {e}", path.display())))?;
    let table = tables
        .iter()
        .find(|t| t.n_controls == n_controls && t.m_traces == m_traces)
        .ok_or_else(|| {
            CliError::missing(format!(
                "calibration file {} has no table for N={n_controls}, M={m_traces}; \
                 rerun `kscore calibrate` for these counts",
                path.display()
            ))
        })?;
    table.c_for(alpha).ok_or_else(|| {
        CliError::missing(format!(
            "calibration table for N={n_controls} lacks alpha={alpha}; available: {:?}",
            table.alpha_levels
        ))
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text.as_bytes())
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn ingest(input: &Path, format: LibraryFormat) -> Result<(), CliError> {
    let library = load(input, format)?;
    let replicates: BTreeMap<&str, usize> = library
        .sources()
        .iter()
        .map(|(id, reps)| (id.as_str(), reps.len()))
        .collect();
    let grid = library.grid();
    let summary = json!({
        "sources": library.n_sources(),
        "spectra": library.n_spectra(),
        "replicates_per_source": replicates,
        "grid": {
            "min": grid[0],
            "max": grid[grid.len() - 1],
            "points": grid.len(),
        },
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    Ok(())
}

fn simulate(
    output: &Path,
    format: LibraryFormat,
    synthetic: &SyntheticConfig,
    seed: u64,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let library = generate_synthetic_library(synthetic, seed)?;
    write_library(&library, output, format)?;
    let config = json!({
        "synthetic": synthetic,
        "format": format,
        "seed": seed,
    });
    Manifest::new("simulate", seed, threads, config, &[output]).write_next_to(output)?;
    println!(
        "wrote {} ({} sources x {} replicates)",
        output.display(),
        library.n_sources(),
        synthetic.n_replicates
    );
    Ok(())
}

struct TestArgs {
    trace: PathBuf,
    control: PathBuf,
    format: LibraryFormat,
    c_alpha: Option<f64>,
    calibration: Option<PathBuf>,
    alpha: f64,
    k: usize,
    seed: u64,
    output: Option<PathBuf>,
    dump_posterior: Option<PathBuf>,
    dump_scores: Option<PathBuf>,
    dump_estimates: Option<PathBuf>,
}

fn test(args: &TestArgs, config: &RunConfig) -> Result<(), CliError> {
    let trace = flatten(&load(&args.trace, args.format)?);
    let control = flatten(&load(&args.control, args.format)?);
    let n_controls = control.len();
    let m_traces = trace.len();
    let threshold = resolve_threshold(
        args.c_alpha,
        args.calibration.as_deref(),
        args.alpha,
        n_controls,
        m_traces,
    )?;

    let kernel = config.kernel.unwrap_or_default();
    let partition = kscore::pairwise_scores(&trace, &control, &kernel)?;
    let prior_policy = config.prior.unwrap_or_default();
    let prior = prior_policy
        .resolve(&partition.s_n, n_controls)
        .map_err(|e| CliError::input(e.to_string()))?;

    if let Some(path) = &args.dump_posterior {
        let draws =
            kscore::sample_posterior(&partition.s_n, n_controls, &prior, args.k, args.seed)
                .map_err(|e| CliError::numeric(e.to_string()))?;
        let file = std::fs::File::create(path)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        kscore::posterior::write_draws_csv(&draws, file)
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    if let Some(path) = &args.dump_scores {
        let file = std::fs::File::create(path)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        partition
            .write_csv(file)
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    if let Some(path) = &args.dump_estimates {
        let estimates = kscore::anova_estimates(&partition.s_n, n_controls)
            .map_err(|e| CliError::input(e.to_string()))?;
        write_text(
            path,
            &serde_json::to_string_pretty(&estimates).expect("serializable"),
        )?;
    }

    let outcome: TestOutcome = kscore::test_statistic(
        &partition.s_m,
        &partition.s_n,
        n_controls,
        m_traces,
        &prior,
        args.k,
        args.seed,
    )?
    .with_decision(threshold)?;

    let json_text = serde_json::to_string_pretty(&outcome).expect("serializable");
    println!("{json_text}");
    let verdict = match outcome.decision {
        Some(kscore::Decision::RejectCommonSource) => {
            format!("reject common source at level {}", args.alpha)
        }
        _ => format!("fail to reject at level {}", args.alpha),
    };
    println!("{verdict}");
    if let Some(path) = &args.output {
        write_text(path, &json_text)?;
    }
    Ok(())
}

struct CalibrateArgs {
    library: PathBuf,
    format: LibraryFormat,
    n_values: Vec<usize>,
    m_traces: usize,
    alpha_levels: Vec<f64>,
    k_outer: usize,
    k_inner: usize,
    seed: u64,
    output_csv: PathBuf,
    output_json: PathBuf,
}

fn calibrate(args: &CalibrateArgs, pipeline: Pipeline, threads: Option<usize>) -> Result<(), CliError> {
    let library = load(&args.library, args.format)?;
    let mut tables = Vec::with_capacity(args.n_values.len());
    for &n in &args.n_values {
        let table = pipeline.calibrate_c_alpha(
            &library,
            n,
            args.m_traces,
            &args.alpha_levels,
            args.k_outer,
            args.k_inner,
            child_seed(args.seed, n as u64),
        )?;
        tables.push(table);
    }

    // Threshold grid: one row per control count, one column per level.
    let mut csv = String::from("alpha");
    for a in &tables[0].alpha_levels {
        csv.push_str(&format!(",{a}"));
    }
    csv.push('\n');
    for table in &tables {
        csv.push_str(&format!("N={}", table.n_controls));
        for c in &table.c_values {
            csv.push_str(&format!(",{c}"));
        }
        csv.push('\n');
    }
    write_text(&args.output_csv, &csv)?;
    write_text(
        &args.output_json,
        &serde_json::to_string_pretty(&tables).expect("serializable"),
    )?;

    let config = json!({
        "n_values": args.n_values,
        "m_traces": args.m_traces,
        "alpha_levels": args.alpha_levels,
        "k_outer": args.k_outer,
        "k_inner": args.k_inner,
        "seed": args.seed,
        "pipeline": pipeline,
        "library": args.library.display().to_string(),
        "format": args.format,
    });
    Manifest::new(
        "calibrate",
        args.seed,
        threads,
        config,
        &[&args.output_csv, &args.output_json],
    )
    .write_next_to(&args.output_csv)?;
    println!(
        "wrote {} and {}",
        args.output_csv.display(),
        args.output_json.display()
    );
    Ok(())
}

struct PowerArgs {
    library: PathBuf,
    format: LibraryFormat,
    n_controls: usize,
    m_traces: usize,
    c_alpha: f64,
    k: usize,
    seed: u64,
    output: PathBuf,
}

fn power(args: &PowerArgs, pipeline: Pipeline, threads: Option<usize>) -> Result<(), CliError> {
    let library = load(&args.library, args.format)?;
    let curve = pipeline.power_curve(
        &library,
        args.n_controls,
        args.m_traces,
        args.c_alpha,
        args.k,
        args.seed,
    )?;
    let mut csv = String::from("dissimilarity,h,rejected\n");
    for p in &curve.points {
        csv.push_str(&format!("{},{},{}\n", p.dissimilarity, p.h, p.rejected));
    }
    write_text(&args.output, &csv)?;

    let config = json!({
        "n_controls": args.n_controls,
        "m_traces": args.m_traces,
        "c_alpha": args.c_alpha,
        "k": args.k,
        "seed": args.seed,
        "pipeline": pipeline,
        "library": args.library.display().to_string(),
        "format": args.format,
    });
    Manifest::new("power", args.seed, threads, config, &[&args.output])
        .write_next_to(&args.output)?;
    println!("wrote {} ({} points)", args.output.display(), curve.points.len());
    Ok(())
}

struct RmpArgs {
    library: PathBuf,
    format: LibraryFormat,
    trace_source: String,
    n_controls: usize,
    m_traces: usize,
    c_alpha: f64,
    k_inner: usize,
    seed: u64,
    repetitions: usize,
    trace_mode: TraceModeArg,
    resample_controls: bool,
    output_csv: PathBuf,
    output_json: PathBuf,
}

fn rmp(args: &RmpArgs, pipeline: Pipeline, threads: Option<usize>) -> Result<(), CliError> {
    let library = load(&args.library, args.format)?;
    let trace_reps = library.spectra_of(&args.trace_source).map_err(|e| {
        CliError::input(format!("{}: {e}", args.library.display()))
    })?;

    let fixed_trace: Vec<Spectrum> = if trace_reps.len() >= args.m_traces {
        trace_reps[..args.m_traces].to_vec()
    } else {
        pipeline.draw_objects(
            &library,
            &args.trace_source,
            args.m_traces,
            child_seed(args.seed, u64::MAX),
        )?
    };

    let mut estimates = Vec::with_capacity(args.repetitions);
    for rep in 0..args.repetitions as u64 {
        let trace: Vec<Spectrum> = match args.trace_mode {
            TraceModeArg::Fixed => fixed_trace.clone(),
            TraceModeArg::Random => pipeline.draw_objects(
                &library,
                &args.trace_source,
                args.m_traces,
                child_seed(child_seed(args.seed, 0x7f), rep),
            )?,
        };
        let estimate = pipeline.estimate_rmp(
            &trace,
            &library,
            &args.trace_source,
            args.n_controls,
            args.c_alpha,
            args.k_inner,
            child_seed(args.seed, rep),
            args.resample_controls,
        )?;
        estimates.push(estimate);
    }

    let mut csv = String::from("repetition,source_id,h,indistinguishable\n");
    for (rep, estimate) in estimates.iter().enumerate() {
        for (source_id, outcome) in &estimate.per_source {
            csv.push_str(&format!(
                "{rep},{source_id},{},{}\n",
                outcome.h, outcome.indistinguishable
            ));
        }
    }
    write_text(&args.output_csv, &csv)?;
    write_text(
        &args.output_json,
        &serde_json::to_string_pretty(&estimates).expect("serializable"),
    )?;

    let config = json!({
        "trace_source": args.trace_source,
        "n_controls": args.n_controls,
        "m_traces": args.m_traces,
        "c_alpha": args.c_alpha,
        "k_inner": args.k_inner,
        "seed": args.seed,
        "repetitions": args.repetitions,
        "trace_mode": match args.trace_mode {
            TraceModeArg::Fixed => "fixed",
            TraceModeArg::Random => "random",
        },
        "resample_controls": args.resample_controls,
        "pipeline": pipeline,
        "library": args.library.display().to_string(),
        "format": args.format,
    });
    Manifest::new(
        "rmp",
        args.seed,
        threads,
        config,
        &[&args.output_csv, &args.output_json],
    )
    .write_next_to(&args.output_csv)?;
    let rmps: Vec<f64> = estimates.iter().map(|e| e.rmp).collect();
    println!(
        "wrote {} and {} (rmp per repetition: {rmps:?})",
        args.output_csv.display(),
        args.output_json.display()
    );
    Ok(())
}

struct DiagnoseArgs {
    library: PathBuf,
    format: LibraryFormat,
    group_size: usize,
    output: PathBuf,
}

fn diagnose(args: &DiagnoseArgs, pipeline: Pipeline, threads: Option<usize>) -> Result<(), CliError> {
    let library = load(&args.library, args.format)?;
    let report = pipeline.normality_diagnostics(&library, args.group_size)?;
    write_text(
        &args.output,
        &serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    let config = json!({
        "group_size": args.group_size,
        "pipeline": pipeline,
        "library": args.library.display().to_string(),
        "format": args.format,
    });
    Manifest::new("diagnose", 0, threads, config, &[&args.output])
        .write_next_to(&args.output)?;
    println!(
        "wrote {} ({} score vectors, dimension {})",
        args.output.display(),
        report.n_vectors,
        report.score_dim
    );
    Ok(())
}
