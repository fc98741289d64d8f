//! Library file formats.
//!
//! long-csv: header `source_id,replicate_id,wavenumber,absorbance`, one row
//! per point. wide-csv: header `wavenumber,<source:replicate>,...`, one row
//! per grid point. Written floats carry 17 significant digits so a write /
//! read round trip is exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{SourceLibrary, SpectraError, Spectrum};
use crate::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LibraryFormat {
    LongCsv,
    WideCsv,
}

impl FromStr for LibraryFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "long-csv" => Ok(Self::LongCsv),
            "wide-csv" => Ok(Self::WideCsv),
            other => Err(format!("unknown format '{other}' (expected long-csv or wide-csv)")),
        }
    }
}

impl std::fmt::Display for LibraryFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LongCsv => "long-csv",
            Self::WideCsv => "wide-csv",
        })
    }
}

/// Read a library file, validating the shared grid and all invariants.
/// Errors carry the 1-based line number of the offending row.
pub fn read_library(path: &Path, format: LibraryFormat) -> Result<SourceLibrary, SpectraError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    match format {
        LibraryFormat::LongCsv => read_long(reader),
        LibraryFormat::WideCsv => read_wide(reader),
    }
}

fn parse_field(raw: &str, line: u64, what: &str) -> Result<f64, SpectraError> {
    let v: f64 = raw.trim().parse().map_err(|_| SpectraError::Parse {
        line,
        message: format!("cannot parse {what} '{raw}'"),
    })?;
    if !v.is_finite() {
        return Err(SpectraError::Parse {
            line,
            message: format!("non-finite {what} '{raw}'"),
        });
    }
    Ok(v)
}

fn read_long<R: std::io::Read>(reader: R) -> Result<SourceLibrary, SpectraError> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let expected = ["source_id", "replicate_id", "wavenumber", "absorbance"];
        let got: Vec<&str> = headers.iter().map(str::trim).collect();
        if got != expected {
            return Err(SpectraError::Parse {
                line: 1,
                message: format!("expected header {expected:?}, got {got:?}"),
            });
        }
    }

    // Accumulate per (source, replicate) in encounter order.
    let mut order: Vec<(String, String)> = Vec::new();
    let mut points: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    while csv_reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(SpectraError::Parse {
                line,
                message: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let source = record[0].trim().to_string();
        let replicate = record[1].trim().to_string();
        let wavenumber = parse_field(&record[2], line, "wavenumber")?;
        let absorbance = parse_field(&record[3], line, "absorbance")?;

        let key = (source.clone(), replicate.clone());
        let entry = points.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (Vec::new(), Vec::new())
        });
        if let Some(&last) = entry.0.last() {
            if wavenumber <= last {
                return Err(SpectraError::Parse {
                    line,
                    message: format!(
                        "wavenumber {wavenumber} not ascending for {source}:{replicate} \
                         (previous {last}); duplicated or out-of-order rows"
                    ),
                });
            }
        }
        entry.0.push(wavenumber);
        entry.1.push(absorbance);
    }

    if order.is_empty() {
        return Err(SpectraError::NoSpectra);
    }

    let (first_grid, _) = &points[&order[0]];
    let grid = Arc::new(first_grid.clone());
    let mut spectra = Vec::with_capacity(order.len());
    for key in &order {
        let (g, values) = points.remove(key).expect("accumulated above");
        if g != *grid.as_ref() {
            return Err(SpectraError::GridMismatch {
                detail: format!(
                    "{}:{} has {} points but the first spectrum defines {} (or differing wavenumbers)",
                    key.0,
                    key.1,
                    g.len(),
                    grid.len()
                ),
            });
        }
        spectra.push(Spectrum::new(
            Arc::clone(&grid),
            values,
            key.0.clone(),
            key.1.clone(),
        )?);
    }
    SourceLibrary::from_spectra(spectra)
}

fn read_wide<R: std::io::Read>(reader: R) -> Result<SourceLibrary, SpectraError> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let labels: Vec<(String, String)> = {
        let headers = csv_reader.headers()?;
        let mut cols = headers.iter().map(str::trim);
        match cols.next() {
            Some("wavenumber") => {}
            other => {
                return Err(SpectraError::Parse {
                    line: 1,
                    message: format!("first column must be 'wavenumber', got {other:?}"),
                })
            }
        }
        let mut labels = Vec::new();
        for col in cols {
            let (source, replicate) = col.split_once(':').ok_or_else(|| SpectraError::Parse {
                line: 1,
                message: format!("column '{col}' is not of the form source:replicate"),
            })?;
            labels.push((source.to_string(), replicate.to_string()));
        }
        labels
    };
    if labels.is_empty() {
        return Err(SpectraError::NoSpectra);
    }
    for (i, a) in labels.iter().enumerate() {
        if labels[i + 1..].contains(a) {
            return Err(SpectraError::DuplicateReplicate {
                source_id: a.0.clone(),
                replicate_id: a.1.clone(),
            });
        }
    }

    let mut grid = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    let mut record = csv::StringRecord::new();
    while csv_reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != labels.len() + 1 {
            return Err(SpectraError::Parse {
                line,
                message: format!(
                    "expected {} fields, got {}",
                    labels.len() + 1,
                    record.len()
                ),
            });
        }
        let wavenumber = parse_field(&record[0], line, "wavenumber")?;
        if let Some(&last) = grid.last() {
            if wavenumber <= last {
                return Err(SpectraError::Parse {
                    line,
                    message: format!("wavenumber {wavenumber} not ascending (previous {last})"),
                });
            }
        }
        grid.push(wavenumber);
        for (col, values) in columns.iter_mut().enumerate() {
            values.push(parse_field(&record[col + 1], line, "absorbance")?);
        }
    }
    if grid.is_empty() {
        return Err(SpectraError::NoSpectra);
    }

    let grid = Arc::new(grid);
    let mut spectra = Vec::with_capacity(labels.len());
    for ((source, replicate), values) in labels.into_iter().zip(columns) {
        spectra.push(Spectrum::new(Arc::clone(&grid), values, source, replicate)?);
    }
    SourceLibrary::from_spectra(spectra)
}

/// Write a library in the requested format (floats at 17 significant digits).
pub fn write_library(
    library: &SourceLibrary,
    path: &Path,
    format: LibraryFormat,
) -> Result<(), SpectraError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    match format {
        LibraryFormat::LongCsv => write_long(library, &mut writer)?,
        LibraryFormat::WideCsv => write_wide(library, &mut writer)?,
    }
    writer.flush()?;
    Ok(())
}

fn write_long<W: Write>(library: &SourceLibrary, w: &mut W) -> Result<(), SpectraError> {
    writeln!(w, "source_id,replicate_id,wavenumber,absorbance")?;
    for (source, reps) in library.sources() {
        for sp in reps {
            for (x, v) in sp.grid().iter().zip(sp.values()) {
                writeln!(
                    w,
                    "{source},{rep},{x},{v}",
                    rep = sp.replicate_id(),
                    x = fmt_f64(*x),
                    v = fmt_f64(*v)
                )?;
            }
        }
    }
    Ok(())
}

fn write_wide<W: Write>(library: &SourceLibrary, w: &mut W) -> Result<(), SpectraError> {
    let mut header = String::from("wavenumber");
    let mut all: Vec<&Spectrum> = Vec::new();
    for (source, reps) in library.sources() {
        for sp in reps {
            header.push(',');
            header.push_str(source);
            header.push(':');
            header.push_str(sp.replicate_id());
            all.push(sp);
        }
    }
    writeln!(w, "{header}")?;
    for (row, x) in library.grid().iter().enumerate() {
        let mut line = fmt_f64(*x);
        for sp in &all {
            line.push(',');
            line.push_str(&fmt_f64(sp.values()[row]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
