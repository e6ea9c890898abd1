//! Distances between points on the unit sphere.
//!
//! Chord is the Euclidean distance `|u - v|`; arc is the geodesic
//! `arccos(u . v)`. They are related by `arc = 2 asin(chord / 2)`, so both
//! order pairs identically.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{Array2, AutodiffError, Graph, Var};

/// Tolerance on `|u| = 1` for the pure distance functions.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SphereMetric {
    Chord,
    #[default]
    Arc,
}

impl SphereMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SphereMetric::Chord => "chord",
            SphereMetric::Arc => "arc",
        }
    }

    /// Largest distance between two unit vectors.
    pub fn max_distance(self) -> f64 {
        match self {
            SphereMetric::Chord => 2.0,
            SphereMetric::Arc => std::f64::consts::PI,
        }
    }
}

impl fmt::Display for SphereMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SphereMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chord" => Ok(SphereMetric::Chord),
            "arc" => Ok(SphereMetric::Arc),
            other => Err(format!("unknown metric '{other}' (expected arc or chord)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("expected a unit vector, got norm {norm}")]
    NotUnit { norm: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

fn check_unit(u: &[f64]) -> Result<(), GeometryError> {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(GeometryError::NotUnit { norm });
    }
    Ok(())
}

fn check_pair(u: &[f64], v: &[f64]) -> Result<(), GeometryError> {
    if u.len() != v.len() {
        return Err(GeometryError::Dimension(u.len(), v.len()));
    }
    check_unit(u)?;
    check_unit(v)
}

pub fn chord_distance(u: &[f64], v: &[f64]) -> Result<f64, GeometryError> {
    check_pair(u, v)?;
    Ok(chord_unchecked(u, v))
}

pub fn arc_distance(u: &[f64], v: &[f64]) -> Result<f64, GeometryError> {
    check_pair(u, v)?;
    Ok(arc_unchecked(u, v))
}

pub fn distance(metric: SphereMetric, u: &[f64], v: &[f64]) -> Result<f64, GeometryError> {
    match metric {
        SphereMetric::Chord => chord_distance(u, v),
        SphereMetric::Arc => arc_distance(u, v),
    }
}

fn chord_unchecked(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn arc_unchecked(u: &[f64], v: &[f64]) -> f64 {
    // Rounding in the dot product would otherwise give ~1e-8 for identical points.
    if u == v {
        return 0.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    dot.clamp(-1.0, 1.0).acos()
}

pub(crate) fn distance_unchecked(metric: SphereMetric, u: &[f64], v: &[f64]) -> f64 {
    match metric {
        SphereMetric::Chord => chord_unchecked(u, v),
        SphereMetric::Arc => arc_unchecked(u, v),
    }
}

/// `m x k` matrix of distances between the rows of `a` and the rows of `b`.
pub fn pairwise_distances(a: &Array2, b: &Array2, metric: SphereMetric) -> Result<Array2, GeometryError> {
    if a.cols() != b.cols() {
        return Err(GeometryError::Dimension(a.cols(), b.cols()));
    }
    for r in 0..a.rows() {
        check_unit(a.row(r))?;
    }
    for r in 0..b.rows() {
        check_unit(b.row(r))?;
    }
    Ok(Array2::from_fn(a.rows(), b.rows(), |i, j| {
        distance_unchecked(metric, a.row(i), b.row(j))
    }))
}

/// Differentiable pairwise distances between rows of two embedding nodes.
///
/// Arc goes through `clamp(a bᵀ, -1, 1)` then `arccos`, so coincident rows
/// (dot product rounding to at or above 1) pass no gradient.
pub fn pairwise_distance_node(g: &mut Graph, a: Var, b: Var, metric: SphereMetric) -> Result<Var, AutodiffError> {
    match metric {
        SphereMetric::Chord => g.pairwise_row_distance(a, b),
        SphereMetric::Arc => {
            let bt = g.transpose(b)?;
            let dots = g.matmul(a, bt)?;
            let clamped = g.clamp(dots, -1.0, 1.0)?;
            g.arccos(clamped)
        }
    }
}
