//! Interval arithmetic over axis-aligned boxes.
//!
//! Every set handled by the verification pipeline is a hyper-rectangle: the
//! reachable sets themselves, the initial sets read from sensors, and the
//! per-step enclosures produced by face lifting. This module provides the box
//! type plus the handful of operations the rest of the crate needs: interval
//! hulls, conservative intersection tests against linear constraint sets, and
//! minimum distances between boxes projected onto position axes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("operation requires at least one rectangle")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("bloat amounts must be non-negative, got {value} at axis {axis}")]
    NegativeBloat { axis: usize, value: f64 },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("constraint set must have at least one row")]
    EmptyConstraintSet,
}

/// A closed interval `[lo, hi]` with finite bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GeometryError> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(GeometryError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate interval containing exactly one point.
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

/// An axis-aligned box: the product of one interval per state dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRectangle {
    pub dims: Vec<Interval>,
}

impl HyperRectangle {
    pub fn new(dims: Vec<Interval>) -> Result<Self, GeometryError> {
        if dims.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        for d in &dims {
            Interval::new(d.lo, d.hi)?;
        }
        Ok(Self { dims })
    }

    /// Box from per-axis `(lo, hi)` pairs.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self, GeometryError> {
        let dims = bounds
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dims)
    }

    /// Degenerate box containing exactly one point.
    pub fn point(state: &[f64]) -> Result<Self, GeometryError> {
        if state.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        let dims = state
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    Ok(Interval::point(v))
                } else {
                    Err(GeometryError::InvalidInterval { lo: v, hi: v })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && self.dims.iter().zip(p).all(|(d, &v)| d.contains(v))
    }

    pub fn contains(&self, other: &HyperRectangle) -> bool {
        self.dim() == other.dim()
            && self
                .dims
                .iter()
                .zip(&other.dims)
                .all(|(a, b)| a.lo <= b.lo && b.hi <= a.hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.dims.iter().map(|d| 0.5 * (d.lo + d.hi)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::width).collect()
    }

    /// Smallest box containing every input box.
    pub fn interval_hull(rects: &[HyperRectangle]) -> Result<HyperRectangle, GeometryError> {
        let first = rects.first().ok_or(GeometryError::EmptyInput)?;
        let n = first.dim();
        let mut dims = first.dims.clone();
        for r in &rects[1..] {
            if r.dim() != n {
                return Err(GeometryError::DimensionMismatch {
                    expected: n,
                    got: r.dim(),
                });
            }
            for (acc, d) in dims.iter_mut().zip(&r.dims) {
                *acc = acc.hull(d);
            }
        }
        Ok(HyperRectangle { dims })
    }

    /// Euclidean distance between the projections of two boxes onto
    /// `position_axes`. Zero exactly when the projections overlap on every
    /// listed axis.
    pub fn min_distance(
        &self,
        other: &HyperRectangle,
        position_axes: &[usize],
    ) -> Result<f64, GeometryError> {
        let mut sum = 0.0;
        for &axis in position_axes {
            let a = self
                .dims
                .get(axis)
                .ok_or(GeometryError::AxisOutOfRange { axis, dim: self.dim() })?;
            let b = other
                .dims
                .get(axis)
                .ok_or(GeometryError::AxisOutOfRange { axis, dim: other.dim() })?;
            let gap = (a.lo - b.hi).max(b.lo - a.hi).max(0.0);
            sum += gap * gap;
        }
        Ok(sum.sqrt())
    }

    /// Conservative test of the box against `{x : Cx <= d}`.
    ///
    /// Returns `false` only when the box provably misses the constraint set:
    /// some row's value is above its bound everywhere on the box. A `true`
    /// answer means the intersection could not be excluded, which is the safe
    /// direction for verification.
    pub fn possibly_intersects(
        &self,
        unsafe_set: &LinearConstraintSet,
    ) -> Result<bool, GeometryError> {
        let n = self.dim();
        for row in &unsafe_set.rows {
            if row.coeffs.len() != n {
                return Err(GeometryError::DimensionMismatch {
                    expected: n,
                    got: row.coeffs.len(),
                });
            }
            // Interval lower bound of c.x over the box.
            let mut lower = 0.0;
            for (c, d) in row.coeffs.iter().zip(&self.dims) {
                lower += if *c >= 0.0 { c * d.lo } else { c * d.hi };
            }
            if lower > row.bound {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Widen each axis by `+-eps[k]`.
    pub fn bloat(&self, eps: &[f64]) -> Result<HyperRectangle, GeometryError> {
        if eps.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got: eps.len(),
            });
        }
        if let Some((axis, &value)) = eps.iter().enumerate().find(|(_, &e)| !(e >= 0.0)) {
            return Err(GeometryError::NegativeBloat { axis, value });
        }
        let dims = self
            .dims
            .iter()
            .zip(eps)
            .map(|(d, e)| Interval {
                lo: d.lo - e,
                hi: d.hi + e,
            })
            .collect();
        Ok(HyperRectangle { dims })
    }
}

/// One row of a linear constraint set: `coeffs . x <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

/// Conjunction of linear constraints `{x : Cx <= d}`, used for both per-agent
/// unsafe sets and the joint unsafe set over all agents' stacked states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraintSet {
    pub rows: Vec<ConstraintRow>,
}

impl LinearConstraintSet {
    pub fn new(rows: Vec<ConstraintRow>) -> Result<Self, GeometryError> {
        let first = rows.first().ok_or(GeometryError::EmptyConstraintSet)?;
        let n = first.coeffs.len();
        for row in &rows {
            if row.coeffs.len() != n {
                return Err(GeometryError::DimensionMismatch {
                    expected: n,
                    got: row.coeffs.len(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map(|r| r.coeffs.len()).unwrap_or(0)
    }

    /// Whether a concrete point satisfies every row.
    pub fn satisfied_by(&self, x: &[f64]) -> bool {
        self.rows.iter().all(|row| {
            row.coeffs.len() == x.len()
                && row.coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() <= row.bound
        })
    }
}
