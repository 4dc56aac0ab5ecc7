//! Point-forecast error measures for long- and short-horizon evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(shape_err("metric inputs", y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(Error::Empty("metric inputs"));
    }
    Ok(())
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Symmetric MAPE in `[0, 200]`.
pub fn smape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let mut total = 0.0;
    for (i, (a, b)) in y.iter().zip(y_hat).enumerate() {
        let denom = a.abs() + b.abs();
        if denom == 0.0 {
            return Err(Error::ZeroDenominator { metric: "smape", index: i });
        }
        total += (a - b).abs() / denom;
    }
    Ok(200.0 * total / y.len() as f64)
}

pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let mut total = 0.0;
    for (i, (a, b)) in y.iter().zip(y_hat).enumerate() {
        if *a == 0.0 {
            return Err(Error::ZeroDenominator { metric: "mape", index: i });
        }
        total += (a - b).abs() / a.abs();
    }
    Ok(100.0 * total / y.len() as f64)
}

/// Source of the seasonal-difference scale in MASE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaseScale {
    /// Seasonal differences of the target window itself, scaled by `1/(H - s)`.
    #[default]
    Window,
    /// Seasonal differences of the in-sample history (M4 tooling convention).
    History,
}

fn seasonal_scale(series: &[f64], s: usize) -> Option<f64> {
    if s == 0 || series.len() <= s {
        return None;
    }
    let diffs: f64 = (s..series.len()).map(|j| (series[j] - series[j - s]).abs()).sum();
    Some(diffs / (series.len() - s) as f64)
}

/// Mean absolute error scaled by the in-window seasonal naive error.
pub fn mase(y: &[f64], y_hat: &[f64], s: usize) -> Result<f64> {
    check(y, y_hat)?;
    let scale = seasonal_scale(y, s).ok_or_else(|| {
        Error::InvalidArgument(format!("MASE needs H > s, got H={} s={s}", y.len()))
    })?;
    if scale == 0.0 {
        return Err(Error::ZeroDenominator { metric: "mase", index: 0 });
    }
    Ok(mae(y, y_hat)? / scale)
}

/// MASE with the scale taken from `history`.
pub fn mase_with_history(y: &[f64], y_hat: &[f64], history: &[f64], s: usize) -> Result<f64> {
    check(y, y_hat)?;
    let scale = seasonal_scale(history, s).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "history of {} steps too short for period {s}",
            history.len()
        ))
    })?;
    if scale == 0.0 {
        return Err(Error::ZeroDenominator { metric: "mase", index: 0 });
    }
    Ok(mae(y, y_hat)? / scale)
}

pub fn mase_scaled(y: &[f64], y_hat: &[f64], history: &[f64], s: usize, scale: MaseScale) -> Result<f64> {
    match scale {
        MaseScale::Window => mase(y, y_hat, s),
        MaseScale::History => mase_with_history(y, y_hat, history, s),
    }
}

/// Overall weighted average relative to reference (Naive2) scores.
pub fn owa(smape: f64, mase: f64, smape_ref: f64, mase_ref: f64) -> Result<f64> {
    if !(smape_ref > 0.0 && mase_ref > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "OWA references must be positive, got sMAPE {smape_ref} and MASE {mase_ref}"
        )));
    }
    Ok(0.5 * (smape / smape_ref + mase / mase_ref))
}

/// Repeats the last observed season: `ŷ_h = history[len - s + (h mod s)]`.
pub fn seasonal_naive(history: &[f64], s: usize, horizon: usize) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(Error::InvalidArgument("seasonal period must be positive".into()));
    }
    if history.len() < s {
        return Err(Error::TooShort(format!(
            "history of {} steps is shorter than period {s}",
            history.len()
        )));
    }
    let base = history.len() - s;
    Ok((0..horizon).map(|h| history[base + h % s]).collect())
}
