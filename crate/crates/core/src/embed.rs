//! Overlapping patching, the convolutional patch embedding and the
//! series-level embedding.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ops::{linear, linear_backward, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
}

impl PatchConfig {
    pub fn validate(&self, lookback: usize) -> Result<()> {
        if self.stride == 0 || self.stride > self.patch_len {
            return Err(Error::InvalidArgument(format!(
                "stride must satisfy 1 <= stride <= patch_len, got stride {} patch_len {}",
                self.stride, self.patch_len
            )));
        }
        if self.patch_len > lookback {
            return Err(Error::TooShort(format!(
                "look-back {lookback} is shorter than patch length {}",
                self.patch_len
            )));
        }
        if self.d_model == 0 {
            return Err(Error::InvalidArgument("embedding width must be positive".into()));
        }
        Ok(())
    }
}

/// `floor((T - C) / S) + 2`.
pub fn patch_count(lookback: usize, patch_len: usize, stride: usize) -> usize {
    (lookback - patch_len) / stride + 2
}

/// Pads `x` with `stride` copies of its last value and cuts length-`patch_len`
/// windows at step `stride`. Returns an `N × C` matrix.
pub fn patchify(x: &[f64], cfg: &PatchConfig) -> Result<Matrix> {
    cfg.validate(x.len())?;
    let (c, s) = (cfg.patch_len, cfg.stride);
    let last = *x.last().expect("validated non-empty");
    let padded: Vec<f64> = x.iter().copied().chain(std::iter::repeat_n(last, s)).collect();
    let n = patch_count(x.len(), c, s);
    let mut out = Matrix::zeros(n, c);
    for p in 0..n {
        out.row_mut(p).copy_from_slice(&padded[p * s..p * s + c]);
    }
    Ok(out)
}

/// Scatters patch gradients back onto the length-`lookback` input; padding
/// replicas accumulate into the final step.
pub fn patchify_backward(d_patches: &Matrix, lookback: usize, cfg: &PatchConfig) -> Vec<f64> {
    let mut dx = vec![0.0; lookback];
    for p in 0..d_patches.rows {
        for (j, g) in d_patches.row(p).iter().enumerate() {
            let idx = (p * cfg.stride + j).min(lookback - 1);
            dx[idx] += g;
        }
    }
    dx
}

/// `P = patches · Aᵀ + b` with `A: D × C`.
pub fn embed_patches(patches: &Matrix, weight: &[f64], bias: &[f64], d_model: usize) -> Result<Matrix> {
    let c = patches.cols;
    if weight.len() != d_model * c || bias.len() != d_model {
        return Err(shape_err(
            "patch embedding",
            format!("weight {d_model}x{c}, bias {d_model}"),
            format!("weight {} values, bias {}", weight.len(), bias.len()),
        ));
    }
    Matrix::from_vec(
        patches.rows,
        d_model,
        linear(&patches.data, patches.rows, c, weight, Some(bias), d_model),
    )
}

/// Backward of [`embed_patches`]; returns the patch gradient.
pub fn embed_patches_backward(
    d_p: &Matrix,
    patches: &Matrix,
    weight: &[f64],
    d_weight: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
) -> Matrix {
    let dx = linear_backward(
        &d_p.data,
        &patches.data,
        patches.rows,
        patches.cols,
        weight,
        d_p.cols,
        d_weight,
        d_bias,
    );
    Matrix {
        rows: patches.rows,
        cols: patches.cols,
        data: dx,
    }
}

/// How the `N × D` patch embedding is reduced to one `D`-vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over patches, then a `D → D` affine map.
    #[default]
    Mean,
    /// Row-major flatten, then an `(N·D) → D` affine map.
    Flatten,
}

impl Pooling {
    pub fn input_width(self, n_patches: usize, d_model: usize) -> usize {
        match self {
            Pooling::Mean => d_model,
            Pooling::Flatten => n_patches * d_model,
        }
    }
}

fn pooled(p: &Matrix, pooling: Pooling) -> Vec<f64> {
    match pooling {
        Pooling::Flatten => p.data.clone(),
        Pooling::Mean => {
            let mut m = vec![0.0; p.cols];
            for r in 0..p.rows {
                for (a, v) in m.iter_mut().zip(p.row(r)) {
                    *a += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= p.rows as f64);
            m
        }
    }
}

/// `Z = L · pool(P) + c`.
pub fn series_embedding(p: &Matrix, weight: &[f64], bias: &[f64], pooling: Pooling) -> Result<Vec<f64>> {
    let d = p.cols;
    let width = pooling.input_width(p.rows, d);
    if weight.len() != d * width || bias.len() != d {
        return Err(shape_err(
            "series embedding",
            format!("weight {d}x{width}, bias {d}"),
            format!("weight {} values, bias {}", weight.len(), bias.len()),
        ));
    }
    Ok(linear(&pooled(p, pooling), 1, width, weight, Some(bias), d))
}

/// Backward of [`series_embedding`]; returns `dP`.
pub fn series_embedding_backward(
    d_z: &[f64],
    p: &Matrix,
    weight: &[f64],
    pooling: Pooling,
    d_weight: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
) -> Matrix {
    let d = p.cols;
    let width = pooling.input_width(p.rows, d);
    let d_in = linear_backward(d_z, &pooled(p, pooling), 1, width, weight, d, d_weight, d_bias);
    match pooling {
        Pooling::Flatten => Matrix {
            rows: p.rows,
            cols: d,
            data: d_in,
        },
        Pooling::Mean => {
            let scale = 1.0 / p.rows as f64;
            let mut out = Matrix::zeros(p.rows, d);
            for r in 0..p.rows {
                for (o, g) in out.row_mut(r).iter_mut().zip(&d_in) {
                    *o = g * scale;
                }
            }
            out
        }
    }
}
