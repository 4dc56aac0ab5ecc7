//! Dense row-major kernels with hand-written backward passes.
//!
//! Weights are stored `[out, in]`, so `y[r][o] = dot(x[r], w[o]) + b[o]`.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `x: rows × in_dim` → `rows × out_dim`.
pub fn linear(
    x: &[f64],
    rows: usize,
    in_dim: usize,
    w: &[f64],
    b: Option<&[f64]>,
    out_dim: usize,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * in_dim);
    debug_assert_eq!(w.len(), out_dim * in_dim);
    let mut y = vec![0.0; rows * out_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let yr = &mut y[r * out_dim..(r + 1) * out_dim];
        for (o, yo) in yr.iter_mut().enumerate() {
            let mut acc = b.map_or(0.0, |b| b[o]);
            acc += dot(xr, &w[o * in_dim..(o + 1) * in_dim]);
            *yo = acc;
        }
    }
    y
}

/// Backward of [`linear`]. Returns `dx`; accumulates into `dw`/`db` when given.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    dy: &[f64],
    x: &[f64],
    rows: usize,
    in_dim: usize,
    w: &[f64],
    out_dim: usize,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * in_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let dyr = &dy[r * out_dim..(r + 1) * out_dim];
        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wo = &w[o * in_dim..(o + 1) * in_dim];
            for (d, wv) in dxr.iter_mut().zip(wo) {
                *d += g * wv;
            }
            if let Some(dw) = dw.as_deref_mut() {
                let dwo = &mut dw[o * in_dim..(o + 1) * in_dim];
                for (d, xv) in dwo.iter_mut().zip(xr) {
                    *d += g * xv;
                }
            }
            if let Some(db) = db.as_deref_mut() {
                db[o] += g;
            }
        }
    }
    dx
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer norm. Returns `(y, mean, rstd)`.
pub fn layer_norm(
    x: &[f64],
    rows: usize,
    dim: usize,
    gain: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; rows * dim];
    let mut means = vec![0.0; rows];
    let mut rstds = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().sum::<f64>() / dim as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for i in 0..dim {
            y[r * dim + i] = (xr[i] - mean) * rstd * gain[i] + bias[i];
        }
        means[r] = mean;
        rstds[r] = rstd;
    }
    (y, means, rstds)
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    dy: &[f64],
    x: &[f64],
    means: &[f64],
    rstds: &[f64],
    rows: usize,
    dim: usize,
    gain: &[f64],
    mut dgain: Option<&mut [f64]>,
    mut dbias: Option<&mut [f64]>,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * dim];
    for r in 0..rows {
        let (mean, rstd) = (means[r], rstds[r]);
        let xr = &x[r * dim..(r + 1) * dim];
        let dyr = &dy[r * dim..(r + 1) * dim];
        let mut dnorm_mean = 0.0;
        let mut dnorm_norm_mean = 0.0;
        for i in 0..dim {
            let norm = (xr[i] - mean) * rstd;
            let dnorm = gain[i] * dyr[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= dim as f64;
        dnorm_norm_mean /= dim as f64;
        for i in 0..dim {
            let norm = (xr[i] - mean) * rstd;
            let dnorm = gain[i] * dyr[i];
            dx[r * dim + i] = (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rstd;
            if let Some(dg) = dgain.as_deref_mut() {
                dg[i] += norm * dyr[i];
            }
            if let Some(db) = dbias.as_deref_mut() {
                db[i] += dyr[i];
            }
        }
    }
    dx
}

const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let cube = 0.044715 * x * x * x;
    0.5 * x * (1.0 + (GELU_SCALE * (x + cube)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cube = 0.044715 * x * x * x;
    let arg = GELU_SCALE * (x + cube);
    let t = arg.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_SCALE * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}


/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> crate::error::Result<Self> {
        if data.len() != rows * cols {
            return Err(crate::error::shape_err(
                "matrix construction",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> crate::error::Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(crate::error::shape_err("matrix rows", cols, "ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}
