//! Reversible instance normalization of univariate windows.
//!
//! Statistics are per instance and treated as constants for the backward
//! pass; only the per-channel affine `(gamma, beta)` receives gradients.

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Statistics and affine captured by [`normalize`] and consumed by [`denormalize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RevinState {
    pub mean: f64,
    /// `sqrt(population variance + epsilon)`.
    pub std: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub beta: f64,
}

pub fn normalize(x: &[f64], gamma: f64, beta: f64, epsilon: f64) -> Result<(Vec<f64>, RevinState)> {
    if x.is_empty() {
        return Err(Error::Empty("normalize input"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("normalize input"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = (var + epsilon).sqrt();
    let out = x.iter().map(|v| gamma * (v - mean) / std + beta).collect();
    Ok((
        out,
        RevinState {
            mean,
            std,
            epsilon,
            gamma,
            beta,
        },
    ))
}

pub fn denormalize(y: &[f64], state: &RevinState) -> Result<Vec<f64>> {
    if state.gamma == 0.0 {
        return Err(Error::InvalidArgument(
            "RevIN affine with gamma = 0 is not invertible".into(),
        ));
    }
    Ok(y
        .iter()
        .map(|v| (v - state.beta) / state.gamma * state.std + state.mean)
        .collect())
}

/// Gradient of the affine given `d(x_norm)`: returns `(d_gamma, d_beta)`.
pub fn normalize_backward(d_out: &[f64], x: &[f64], state: &RevinState) -> (f64, f64) {
    let mut dg = 0.0;
    let mut db = 0.0;
    for (g, v) in d_out.iter().zip(x) {
        dg += g * (v - state.mean) / state.std;
        db += g;
    }
    (dg, db)
}

/// Backward of [`denormalize`] at normalized output `y`: returns
/// `(d_y, d_gamma, d_beta)`.
pub fn denormalize_backward(d_out: &[f64], y: &[f64], state: &RevinState) -> (Vec<f64>, f64, f64) {
    let scale = state.std / state.gamma;
    let mut dg = 0.0;
    let mut db = 0.0;
    let dy = d_out
        .iter()
        .zip(y)
        .map(|(g, v)| {
            dg -= g * (v - state.beta) * state.std / (state.gamma * state.gamma);
            db -= g * scale;
            g * scale
        })
        .collect();
    (dy, dg, db)
}
