//! Symmetric dissimilarity scores between spectra and the partitioned
//! pairwise score vector.
//!
//! The score of a pair combines two components on the informative region of
//! the pair: `w_corr * (1 - max lagged Pearson correlation)` and
//! `w_norm * (masked Euclidean difference / sqrt(masked length))`. Both
//! vanish for identical inputs and the construction is symmetric, so
//! `score(x, y) == score(y, x)` exactly. Regions where both spectra sit
//! below a low-signal threshold over a long contiguous run are filtered out
//! before comparison; the mask is computed per pair.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt_f64;
use crate::spectra::Spectrum;

#[derive(Error, Debug)]
pub enum KernelError {
    #[error("spectra are not on a shared grid")]
    GridMismatch,

    #[error(
        "degenerate mask: only {kept} informative points remain, need at least {needed}"
    )]
    DegenerateMask { kept: usize, needed: usize },

    #[error("zero-variance masked segment at lag {lag}; correlation is undefined")]
    ZeroVariance { lag: i64 },

    #[error("lag {lag} leaves {got} overlapping points, need at least 2")]
    InsufficientOverlap { lag: i64, got: usize },

    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),

    #[error("need at least {needed} control objects, got {got}")]
    TooFewControls { needed: usize, got: usize },

    #[error("need at least one trace object")]
    NoTraceObjects,

    #[error("kernel failed for pair ({i}, {j}): {source}")]
    AtPair {
        i: usize,
        j: usize,
        #[source]
        source: Box<KernelError>,
    },
}

/// Masking rule applied per compared pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Keep every grid point.
    None,
    /// Drop a point iff both spectra sit below `threshold` (as a fraction of
    /// each spectrum's own maximum) over a contiguous run longer than
    /// `min_run_len` points.
    LowSignal { threshold: f64, min_run_len: usize },
}

/// Kernel configuration: lag window, masking rule and component weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    /// Symmetric lag window, inclusive; must be `(-L, L)`.
    pub lag_range: (i64, i64),
    pub mask_policy: MaskPolicy,
    pub w_corr: f64,
    pub w_norm: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            lag_range: (-10, 10),
            mask_policy: MaskPolicy::LowSignal {
                threshold: 0.02,
                min_run_len: 25,
            },
            w_corr: 1.0,
            w_norm: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), KernelError> {
        let (lo, hi) = self.lag_range;
        if lo != -hi || hi < 0 {
            return Err(KernelError::InvalidSpec(format!(
                "lag_range {:?} must be symmetric about 0",
                self.lag_range
            )));
        }
        if !(self.w_corr >= 0.0) || !(self.w_norm >= 0.0) {
            return Err(KernelError::InvalidSpec(
                "weights must be nonnegative".into(),
            ));
        }
        if self.w_corr == 0.0 && self.w_norm == 0.0 {
            return Err(KernelError::InvalidSpec(
                "weights must not both be zero".into(),
            ));
        }
        if let MaskPolicy::LowSignal { threshold, .. } = self.mask_policy {
            if !(threshold > 0.0) || !(threshold < 1.0) {
                return Err(KernelError::InvalidSpec(format!(
                    "low-signal threshold {threshold} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn max_lag(&self) -> i64 {
        self.lag_range.1
    }
}

/// Boolean keep-mask over the shared grid for one compared pair.
pub fn informative_mask(
    a: &Spectrum,
    b: &Spectrum,
    policy: &MaskPolicy,
) -> Result<Vec<bool>, KernelError> {
    if !a.same_grid(b) {
        return Err(KernelError::GridMismatch);
    }
    let len = a.len();
    match *policy {
        MaskPolicy::None => Ok(vec![true; len]),
        MaskPolicy::LowSignal {
            threshold,
            min_run_len,
        } => {
            let max = |s: &Spectrum| s.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ta = threshold * max(a).max(0.0);
            let tb = threshold * max(b).max(0.0);
            let low: Vec<bool> = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(&x, &y)| x <= ta && y <= tb)
                .collect();
            let mut mask = vec![true; len];
            let mut start = 0;
            while start < len {
                if !low[start] {
                    start += 1;
                    continue;
                }
                let mut end = start;
                while end < len && low[end] {
                    end += 1;
                }
                if end - start > min_run_len {
                    for m in &mut mask[start..end] {
                        *m = false;
                    }
                }
                start = end;
            }
            Ok(mask)
        }
    }
}

fn pearson_at_lag(
    a: &[f64],
    b: &[f64],
    mask: &[bool],
    lag: i64,
) -> Result<f64, KernelError> {
    let len = a.len() as i64;
    let t_lo = 0.max(-lag);
    let t_hi = len - 1 - 0.max(lag);
    let mut count = 0usize;
    let mut sum_x = 0.0;
    let mut sum_y = 0.0;
    for t in t_lo..=t_hi {
        let u = (t + lag) as usize;
        let t = t as usize;
        if mask[t] && mask[u] {
            count += 1;
            sum_x += a[t];
            sum_y += b[u];
        }
    }
    if count < 2 {
        return Err(KernelError::InsufficientOverlap { lag, got: count });
    }
    let mean_x = sum_x / count as f64;
    let mean_y = sum_y / count as f64;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for t in t_lo..=t_hi {
        let u = (t + lag) as usize;
        let t = t as usize;
        if mask[t] && mask[u] {
            let dx = a[t] - mean_x;
            let dy = b[u] - mean_y;
            cov += dx * dy;
            var_x += dx * dx;
            var_y += dy * dy;
        }
    }
    let denom = (var_x * var_y).sqrt();
    if denom == 0.0 {
        return Err(KernelError::ZeroVariance { lag });
    }
    // Guard the upper bound so the dissimilarity can never round negative.
    Ok((cov / denom).min(1.0))
}

/// Dissimilarity score of a pair of spectra.
pub fn kernel_score(a: &Spectrum, b: &Spectrum, spec: &KernelSpec) -> Result<f64, KernelError> {
    spec.validate()?;
    if !a.same_grid(b) {
        return Err(KernelError::GridMismatch);
    }
    let mask = informative_mask(a, b, &spec.mask_policy)?;
    let kept = mask.iter().filter(|&&m| m).count();
    let needed = 2 * spec.max_lag() as usize + 2;
    if kept < needed {
        return Err(KernelError::DegenerateMask { kept, needed });
    }

    let corr_term = if spec.w_corr > 0.0 {
        let mut best = f64::NEG_INFINITY;
        for lag in spec.lag_range.0..=spec.lag_range.1 {
            let r = pearson_at_lag(a.values(), b.values(), &mask, lag)?;
            if r > best {
                best = r;
            }
        }
        1.0 - best
    } else {
        0.0
    };

    let norm_term = if spec.w_norm > 0.0 {
        let mut sum = 0.0;
        for (t, &m) in mask.iter().enumerate() {
            if m {
                let d = a.values()[t] - b.values()[t];
                sum += d * d;
            }
        }
        sum.sqrt() / (kept as f64).sqrt()
    } else {
        0.0
    };

    Ok(spec.w_corr * corr_term + spec.w_norm * norm_term)
}

/// Which role an object plays in a comparison set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Trace,
    Control,
}

/// Block membership of one pairwise score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    /// Involves at least one trace object.
    #[serde(rename = "m")]
    TraceInvolved,
    /// Control-only pair.
    #[serde(rename = "n")]
    ControlOnly,
}

/// Bookkeeping entry mapping one score position to its object pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    /// Global object indices; traces occupy `0..m_traces`.
    pub i: usize,
    pub j: usize,
    pub role_i: Role,
    pub role_j: Role,
    pub block: Block,
    pub score: f64,
}

/// Pairwise scores split into the trace-involving block `s_m` and the
/// control-only block `s_n`, with full pair bookkeeping.
///
/// Objects are indexed traces-first; pairs are enumerated `(i, j)`, `i < j`,
/// lexicographically, which lists every trace-involving pair before the
/// control-only block. Within each block the canonical order is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePartition {
    pub s_m: DVector<f64>,
    pub s_n: DVector<f64>,
    pub pair_index: Vec<PairEntry>,
    pub n_controls: usize,
    pub m_traces: usize,
}

impl ScorePartition {
    /// Export as CSV with columns `i,j,role_i,role_j,block,score`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,role_i,role_j,block,score")?;
        for e in &self.pair_index {
            let role = |r: Role| match r {
                Role::Trace => "trace",
                Role::Control => "control",
            };
            let block = match e.block {
                Block::TraceInvolved => "m",
                Block::ControlOnly => "n",
            };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.i,
                e.j,
                role(e.role_i),
                role(e.role_j),
                block,
                fmt_f64(e.score)
            )?;
        }
        Ok(())
    }
}

/// Score every pair of the `m_traces + n_controls` objects once.
pub fn pairwise_scores(
    trace: &[Spectrum],
    control: &[Spectrum],
    spec: &KernelSpec,
) -> Result<ScorePartition, KernelError> {
    spec.validate()?;
    if control.len() < 3 {
        return Err(KernelError::TooFewControls {
            needed: 3,
            got: control.len(),
        });
    }
    if trace.is_empty() {
        return Err(KernelError::NoTraceObjects);
    }
    let m_traces = trace.len();
    let total = m_traces + control.len();
    let object = |idx: usize| -> &Spectrum {
        if idx < m_traces {
            &trace[idx]
        } else {
            &control[idx - m_traces]
        }
    };
    let role = |idx: usize| -> Role {
        if idx < m_traces {
            Role::Trace
        } else {
            Role::Control
        }
    };

    let mut s_m = Vec::new();
    let mut s_n = Vec::new();
    let mut pair_index = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        for j in (i + 1)..total {
            let score = kernel_score(object(i), object(j), spec).map_err(|e| {
                KernelError::AtPair {
                    i,
                    j,
                    source: Box::new(e),
                }
            })?;
            let block = if i < m_traces {
                s_m.push(score);
                Block::TraceInvolved
            } else {
                s_n.push(score);
                Block::ControlOnly
            };
            pair_index.push(PairEntry {
                i,
                j,
                role_i: role(i),
                role_j: role(j),
                block,
                score,
            });
        }
    }
    Ok(ScorePartition {
        s_m: DVector::from_vec(s_m),
        s_n: DVector::from_vec(s_n),
        pair_index,
        n_controls: control.len(),
        m_traces,
    })
}
