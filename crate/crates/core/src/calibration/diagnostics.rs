//! Descriptive normality diagnostics for within-source score vectors.
//!
//! The score model assumes the pairwise score vector of a same-source group
//! is multivariate normal. This module checks that assumption descriptively:
//! collect the score vectors of disjoint same-source groups, project them
//! onto the eigenvectors of their sample covariance, and report per-axis
//! skewness, kurtosis and a Jarque-Bera statistic, both in the original
//! coordinates and along the decorrelated axes, plus pairwise correlations.
//! The report is advisory; nothing downstream asserts normality.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CalibrationError;

/// Moments and normality statistics of one coordinate axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisDiagnostics {
    pub axis: usize,
    pub variance: f64,
    pub skewness: Option<f64>,
    /// Raw kurtosis (normal = 3).
    pub kurtosis: Option<f64>,
    pub jb_statistic: Option<f64>,
    pub jb_p_value: Option<f64>,
    /// Set when the axis is (numerically) constant; statistics are omitted
    /// instead of dividing by zero.
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub group_size: usize,
    /// Dimension of each score vector, `C(group_size, 2)`.
    pub score_dim: usize,
    pub n_vectors: usize,
    pub groups_per_source: BTreeMap<String, usize>,
    pub original_axes: Vec<AxisDiagnostics>,
    pub projected_axes: Vec<AxisDiagnostics>,
    pub original_correlations: Vec<Vec<f64>>,
    pub projected_correlations: Vec<Vec<f64>>,
}

fn axis_diagnostics(values: &[f64], axis: usize) -> AxisDiagnostics {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    let mut scale = 0.0_f64;
    for &v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        scale = scale.max(v.abs());
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let zero_variance = m2 <= 1e-24 * scale.max(1.0) * scale.max(1.0);
    if zero_variance {
        return AxisDiagnostics {
            axis,
            variance: m2,
            skewness: None,
            kurtosis: None,
            jb_statistic: None,
            jb_p_value: None,
            zero_variance: true,
        };
    }
    let skewness = m3 / m2.powf(1.5);
    let kurtosis = m4 / (m2 * m2);
    // Jarque-Bera; under normality asymptotically chi-squared with 2 degrees
    // of freedom, whose survival function is exp(-x/2).
    let jb = n / 6.0 * (skewness * skewness + (kurtosis - 3.0) * (kurtosis - 3.0) / 4.0);
    AxisDiagnostics {
        axis,
        variance: m2,
        skewness: Some(skewness),
        kurtosis: Some(kurtosis),
        jb_statistic: Some(jb),
        jb_p_value: Some((-jb / 2.0).exp()),
        zero_variance: false,
    }
}

fn correlation_matrix(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = columns.len();
    let n = columns.first().map_or(0, Vec::len) as f64;
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let sds: Vec<f64> = columns
        .iter()
        .zip(&means)
        .map(|(c, &m)| (c.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
        .collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            if sds[i] == 0.0 || sds[j] == 0.0 {
                out[i][j] = if i == j { 1.0 } else { 0.0 };
                continue;
            }
            let cov = columns[i]
                .iter()
                .zip(&columns[j])
                .map(|(&a, &b)| (a - means[i]) * (b - means[j]))
                .sum::<f64>()
                / n;
            out[i][j] = cov / (sds[i] * sds[j]);
        }
    }
    out
}

pub(super) fn build_report(
    rows: &[DVector<f64>],
    group_size: usize,
    groups_per_source: BTreeMap<String, usize>,
) -> Result<DiagnosticsReport, CalibrationError> {
    let n = rows.len();
    let d = rows[0].len();

    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += r;
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = r - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1).max(1) as f64;

    // Eigenvectors sorted by descending eigenvalue define the projected axes.
    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let mut original_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d];
    let mut projected_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d];
    for r in rows {
        for axis in 0..d {
            original_cols[axis].push(r[axis]);
        }
        let centered = r - &mean;
        for (slot, &e) in order.iter().enumerate() {
            projected_cols[slot].push(eigen.eigenvectors.column(e).dot(&centered));
        }
    }

    let original_axes = original_cols
        .iter()
        .enumerate()
        .map(|(axis, col)| axis_diagnostics(col, axis))
        .collect();
    let projected_axes = projected_cols
        .iter()
        .enumerate()
        .map(|(axis, col)| axis_diagnostics(col, axis))
        .collect();
    let original_correlations = correlation_matrix(&original_cols);
    let projected_correlations = correlation_matrix(&projected_cols);

    Ok(DiagnosticsReport {
        group_size,
        score_dim: d,
        n_vectors: n,
        groups_per_source,
        original_axes,
        projected_axes,
        original_correlations,
        projected_correlations,
    })
}

/// Diagnostics from already-assembled score vectors (all of equal dimension).
pub fn diagnostics_from_vectors(
    rows: &[DVector<f64>],
    group_size: usize,
) -> Result<DiagnosticsReport, CalibrationError> {
    build_report(rows, group_size, BTreeMap::new())
}
