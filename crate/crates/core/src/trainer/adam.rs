use super::TrainError;
use crate::autodiff::Array2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments for a list of tensors, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Array2>,
    v: Vec<Array2>,
    t: u64,
}

impl AdamState {
    pub fn new(shapes: &[&Array2]) -> Self {
        Self {
            m: shapes.iter().map(|t| Array2::zeros(t.rows(), t.cols())).collect(),
            v: shapes.iter().map(|t| Array2::zeros(t.rows(), t.cols())).collect(),
            t: 0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam descent step, `θ ← θ − lr·m̂/(√v̂ + ε)`.
///
/// Nothing is modified when any gradient entry is non-finite.
pub fn adam_step(state: &mut AdamState, params: Vec<&mut Array2>, grads: &[Array2], cfg: &AdamConfig) -> Result<(), TrainError> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(TrainError::Optimizer(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(TrainError::Optimizer(format!(
                "tensor {i}: param {:?}, grad {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
        if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                tensor: i,
                index: bad,
                value: g.data()[bad],
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
