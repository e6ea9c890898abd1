//! Minimal reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! Graphs are rebuilt every step. A [`Graph`] owns the values of every node it
//! records; [`Graph::backward`] walks the tape once in reverse.

mod array;
mod graph;

pub use array::Array2;
pub use graph::{Gradients, Graph, OpKind, Var, ARCCOS_GRAD_CLAMP, NORMALIZE_EPS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("{0}")]
    Contract(String),
}

impl AutodiffError {
    pub(crate) fn shape2(op: &'static str, a: &Array2, b: &Array2) -> Self {
        AutodiffError::Shape {
            op,
            detail: format!("{}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        }
    }
}

/// Compares the reverse-mode gradient of a scalar function against central
/// differences and returns the largest relative error over all coordinates:
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
///
/// `f` builds the loss from a leaf holding the point.
pub fn grad_check<F>(f: F, point: &Array2, step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
{
    if !(1e-7..=1e-4).contains(&step) {
        return Err(AutodiffError::Contract(format!(
            "finite-difference step {step} outside [1e-7, 1e-4]"
        )));
    }
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let loss = f(&mut g, x)?;
    let analytic = g.backward(loss)?.get_or_zeros(&g, x);

    let eval = |p: Array2| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let loss = f(&mut g, x)?;
        let v = g.scalar(loss)?;
        if !v.is_finite() {
            return Err(AutodiffError::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
