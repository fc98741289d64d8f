//! Clamped B-spline bases over a wavenumber domain.
//!
//! The default configuration is a cubic (order 4) basis with uniformly
//! spaced interior knots; a clamped knot vector repeats the domain endpoints
//! `order` times, which gives a partition of unity on the whole domain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SpectraError;

/// B-spline basis definition: order (degree + 1) and a nondecreasing knot
/// vector with `num_bases + order` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct BsplineBasis {
    order: usize,
    knots: Vec<f64>,
}

impl BsplineBasis {
    /// Clamped basis with uniform interior knots over `[lo, hi]`.
    pub fn clamped_uniform(
        order: usize,
        num_bases: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Self, SpectraError> {
        if order == 0 {
            return Err(SpectraError::InvalidBasis("order must be at least 1".into()));
        }
        if num_bases < order {
            return Err(SpectraError::InvalidBasis(format!(
                "num_bases ({num_bases}) must be at least the order ({order})"
            )));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(SpectraError::InvalidBasis(format!(
                "invalid domain [{lo}, {hi}]"
            )));
        }
        let interior = num_bases - order;
        let mut knots = Vec::with_capacity(num_bases + order);
        knots.extend(std::iter::repeat(lo).take(order));
        for i in 1..=interior {
            knots.push(lo + (hi - lo) * i as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat(hi).take(order));
        Ok(Self { order, knots })
    }

    /// Basis from an explicit knot vector (must be nondecreasing and finite).
    pub fn from_knots(order: usize, knots: Vec<f64>) -> Result<Self, SpectraError> {
        if order == 0 {
            return Err(SpectraError::InvalidBasis("order must be at least 1".into()));
        }
        if knots.len() < 2 * order {
            return Err(SpectraError::InvalidBasis(format!(
                "need at least {} knots for order {order}, got {}",
                2 * order,
                knots.len()
            )));
        }
        for w in knots.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(SpectraError::InvalidBasis(format!(
                    "knots decrease at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(SpectraError::InvalidBasis("non-finite knot".into()));
        }
        let basis = Self { order, knots };
        let (lo, hi) = basis.domain();
        if !(lo < hi) {
            return Err(SpectraError::InvalidBasis(format!(
                "degenerate domain [{lo}, {hi}]"
            )));
        }
        Ok(basis)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_bases(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Domain on which the basis functions sum to one.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.knots[self.order - 1],
            self.knots[self.knots.len() - self.order],
        )
    }

    /// Index of the knot span containing `x` (right endpoint maps to the
    /// last nonempty span).
    fn find_span(&self, x: f64) -> usize {
        let b = self.num_bases();
        let p = self.order - 1;
        if x >= self.knots[b] {
            // Right-closed on the final span; skip trailing repeated knots.
            let mut span = b - 1;
            while span > p && self.knots[span] >= self.knots[span + 1] {
                span -= 1;
            }
            return span;
        }
        let mut lo = p;
        let mut hi = b; // invariant: knots[lo] <= x < knots[hi]
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `order` basis values that are nonzero at `x`, plus the index of
    /// the first of them.
    fn nonzero_at(&self, x: f64) -> (usize, Vec<f64>) {
        let span = self.find_span(x);
        let k = self.order;
        let mut vals = vec![0.0; k];
        let mut left = vec![0.0; k];
        let mut right = vec![0.0; k];
        vals[0] = 1.0;
        for j in 1..k {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = vals[r] / denom;
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        (span + 1 - k, vals)
    }
}

/// Evaluate the basis on a grid: row `i` holds the `num_bases` basis
/// functions at `grid[i]`. Every grid point must lie inside the knot domain.
pub fn evaluate_basis(basis: &BsplineBasis, grid: &[f64]) -> Result<DMatrix<f64>, SpectraError> {
    let (lo, hi) = basis.domain();
    let b = basis.num_bases();
    let mut out = DMatrix::zeros(grid.len(), b);
    for (row, &x) in grid.iter().enumerate() {
        if !(x >= lo && x <= hi) {
            return Err(SpectraError::OutsideKnotSpan { x, lo, hi });
        }
        let (first, vals) = basis.nonzero_at(x);
        for (offset, v) in vals.into_iter().enumerate() {
            out[(row, first + offset)] = v;
        }
    }
    Ok(out)
}

/// Serializable basis settings; the knot vector is derived from the grid at
/// fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub order: usize,
    pub num_bases: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            order: 4,
            num_bases: 300,
        }
    }
}

impl BasisConfig {
    /// Clamped uniform basis spanning the observed grid.
    pub fn build_for(&self, grid: &[f64]) -> Result<BsplineBasis, SpectraError> {
        let lo = *grid
            .first()
            .ok_or_else(|| SpectraError::InvalidBasis("empty grid".into()))?;
        let hi = *grid.last().expect("nonempty");
        BsplineBasis::clamped_uniform(self.order, self.num_bases, lo, hi)
    }
}
