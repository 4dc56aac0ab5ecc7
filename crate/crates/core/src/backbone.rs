//! Small GPT-2-shaped transformer over continuous prompt rows.
//!
//! Token embeddings, attention and feed-forward weights are frozen; layer
//! norms and positional embeddings are trainable. Weights are `[out, in]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ops::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place, Matrix,
};
use crate::params::{Grads, ParamId, ParamSpec, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMask {
    #[default]
    Causal,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub attention: AttentionMask,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "width {} must be a positive multiple of the head count {}",
                self.d_model, self.heads
            )));
        }
        if self.max_positions == 0 || self.vocab_size == 0 {
            return Err(Error::InvalidArgument(
                "max_positions and vocab_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Parameter layout in registration order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let d = self.d_model;
        let mut out = vec![
            ParamSpec::new(names::WTE, &[self.vocab_size, d], false),
            ParamSpec::new(names::WPE, &[self.max_positions, d], true),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("backbone/h.{l}.{s}");
            out.extend([
                ParamSpec::new(p("ln_1.weight"), &[d], true),
                ParamSpec::new(p("ln_1.bias"), &[d], true),
                ParamSpec::new(p("attn.c_attn.weight"), &[3 * d, d], false),
                ParamSpec::new(p("attn.c_attn.bias"), &[3 * d], false),
                ParamSpec::new(p("attn.c_proj.weight"), &[d, d], false),
                ParamSpec::new(p("attn.c_proj.bias"), &[d], false),
                ParamSpec::new(p("ln_2.weight"), &[d], true),
                ParamSpec::new(p("ln_2.bias"), &[d], true),
                ParamSpec::new(p("mlp.c_fc.weight"), &[4 * d, d], false),
                ParamSpec::new(p("mlp.c_fc.bias"), &[4 * d], false),
                ParamSpec::new(p("mlp.c_proj.weight"), &[d, 4 * d], false),
                ParamSpec::new(p("mlp.c_proj.bias"), &[d], false),
            ]);
        }
        out.push(ParamSpec::new(names::LN_F_WEIGHT, &[d], true));
        out.push(ParamSpec::new(names::LN_F_BIAS, &[d], true));
        out
    }
}

pub mod names {
    pub const WTE: &str = "backbone/wte";
    pub const WPE: &str = "backbone/wpe";
    pub const LN_F_WEIGHT: &str = "backbone/ln_f.weight";
    pub const LN_F_BIAS: &str = "backbone/ln_f.bias";
}

#[derive(Clone, Debug)]
struct BlockIds {
    ln1_w: ParamId,
    ln1_b: ParamId,
    attn_w: ParamId,
    attn_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    ln2_w: ParamId,
    ln2_b: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
    fc_proj_w: ParamId,
    fc_proj_b: ParamId,
}

/// Handles into a [`ParamStore`] for every backbone tensor.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub wte: ParamId,
    pub wpe: ParamId,
    blocks: Vec<BlockIds>,
    ln_f_w: ParamId,
    ln_f_b: ParamId,
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::InvalidArgument(format!("parameter {name} not registered")))
}

impl Backbone {
    /// Registers freshly initialized backbone tensors (GPT-2 initialization:
    /// N(0, 0.02) weights, residual projections scaled by `1/sqrt(2L)`, zero
    /// biases, unit layer-norm gains).
    pub fn register<R: Rng>(store: &mut ParamStore, config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let std = Normal::new(0.0, 0.02).expect("valid std");
        let resid = Normal::new(0.0, 0.02 / (2.0 * config.layers.max(1) as f64).sqrt()).expect("valid std");
        for spec in config.param_specs() {
            let n = spec.numel();
            let data: Vec<f64> = if spec.name.contains("ln_") {
                let fill = if spec.name.ends_with("weight") { 1.0 } else { 0.0 };
                vec![fill; n]
            } else if spec.name.ends_with("bias") {
                vec![0.0; n]
            } else if spec.name.ends_with("c_proj.weight") {
                (0..n).map(|_| resid.sample(rng)).collect()
            } else {
                (0..n).map(|_| std.sample(rng)).collect()
            };
            store.register(spec.name.clone(), &spec.shape, data, spec.trainable)?;
        }
        Self::bind(store, config)
    }

    /// Resolves handles for tensors already present in `store`.
    pub fn bind(store: &ParamStore, config: BackboneConfig) -> Result<Self> {
        for spec in config.param_specs() {
            let p = store
                .by_name(&spec.name)
                .ok_or_else(|| Error::InvalidArgument(format!("parameter {} missing", spec.name)))?;
            if p.shape != spec.shape {
                return Err(shape_err("backbone parameter", format!("{:?}", spec.shape), format!("{:?}", p.shape)));
            }
        }
        let blocks = (0..config.layers)
            .map(|l| {
                let id = |s: &str| lookup(store, &format!("backbone/h.{l}.{s}"));
                Ok(BlockIds {
                    ln1_w: id("ln_1.weight")?,
                    ln1_b: id("ln_1.bias")?,
                    attn_w: id("attn.c_attn.weight")?,
                    attn_b: id("attn.c_attn.bias")?,
                    proj_w: id("attn.c_proj.weight")?,
                    proj_b: id("attn.c_proj.bias")?,
                    ln2_w: id("ln_2.weight")?,
                    ln2_b: id("ln_2.bias")?,
                    fc_w: id("mlp.c_fc.weight")?,
                    fc_b: id("mlp.c_fc.bias")?,
                    fc_proj_w: id("mlp.c_proj.weight")?,
                    fc_proj_b: id("mlp.c_proj.bias")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            wte: lookup(store, names::WTE)?,
            wpe: lookup(store, names::WPE)?,
            blocks,
            ln_f_w: lookup(store, names::LN_F_WEIGHT)?,
            ln_f_b: lookup(store, names::LN_F_BIAS)?,
        })
    }
}

/// `(N + k) × D` input sequence: patch embeddings followed by retrieved
/// neighbors in retrieval order.
#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub tokens: Matrix,
}

pub fn formulate_prompt(patches: &Matrix, neighbors: &Matrix) -> Result<Prompt> {
    if neighbors.rows > 0 && patches.cols != neighbors.cols {
        return Err(shape_err("prompt width", patches.cols, neighbors.cols));
    }
    let mut data = Vec::with_capacity((patches.rows + neighbors.rows) * patches.cols);
    data.extend_from_slice(&patches.data);
    data.extend_from_slice(&neighbors.data);
    Ok(Prompt {
        tokens: Matrix {
            rows: patches.rows + neighbors.rows,
            cols: patches.cols,
            data,
        },
    })
}

struct BlockCache {
    x_in: Vec<f64>,
    ln1: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    att_y: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    fc: Vec<f64>,
    fc_act: Vec<f64>,
}

/// Activations kept for the backward pass.
pub struct BackboneCache {
    rows: usize,
    blocks: Vec<BlockCache>,
    x_last: Vec<f64>,
    lnf_mean: Vec<f64>,
    lnf_rstd: Vec<f64>,
}

impl Backbone {
    /// Adds positional embeddings, applies the pre-norm blocks and the final
    /// layer norm.
    pub fn forward(&self, store: &ParamStore, prompt: &Prompt) -> Result<(Matrix, BackboneCache)> {
        let cfg = &self.config;
        let (n, d) = (prompt.tokens.rows, cfg.d_model);
        if prompt.tokens.cols != d {
            return Err(shape_err("backbone input width", d, prompt.tokens.cols));
        }
        if n == 0 || n > cfg.max_positions {
            return Err(Error::InvalidArgument(format!(
                "prompt of {n} rows exceeds {} positions",
                cfg.max_positions
            )));
        }
        let wpe = store.get(self.wpe);
        let mut x: Vec<f64> = prompt.tokens.data.iter().zip(wpe).map(|(a, b)| a + b).collect();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for ids in &self.blocks {
            let x_in = x.clone();
            let (ln1, ln1_mean, ln1_rstd) = layer_norm(&x, n, d, store.get(ids.ln1_w), store.get(ids.ln1_b));
            let qkv = linear(&ln1, n, d, store.get(ids.attn_w), Some(store.get(ids.attn_b)), 3 * d);
            let (att_y, probs) = self.attention(&qkv, n);
            let proj = linear(&att_y, n, d, store.get(ids.proj_w), Some(store.get(ids.proj_b)), d);
            for (xv, p) in x.iter_mut().zip(&proj) {
                *xv += p;
            }
            let x_mid = x.clone();
            let (ln2, ln2_mean, ln2_rstd) = layer_norm(&x, n, d, store.get(ids.ln2_w), store.get(ids.ln2_b));
            let fc = linear(&ln2, n, d, store.get(ids.fc_w), Some(store.get(ids.fc_b)), 4 * d);
            let fc_act: Vec<f64> = fc.iter().map(|&v| gelu(v)).collect();
            let out = linear(&fc_act, n, 4 * d, store.get(ids.fc_proj_w), Some(store.get(ids.fc_proj_b)), d);
            for (xv, o) in x.iter_mut().zip(&out) {
                *xv += o;
            }
            blocks.push(BlockCache {
                x_in,
                ln1,
                ln1_mean,
                ln1_rstd,
                qkv,
                probs,
                att_y,
                x_mid,
                ln2,
                ln2_mean,
                ln2_rstd,
                fc,
                fc_act,
            });
        }
        let (hidden, lnf_mean, lnf_rstd) = layer_norm(&x, n, d, store.get(self.ln_f_w), store.get(self.ln_f_b));
        Ok((
            Matrix {
                rows: n,
                cols: d,
                data: hidden,
            },
            BackboneCache {
                rows: n,
                blocks,
                x_last: x,
                lnf_mean,
                lnf_rstd,
            },
        ))
    }

    fn attention(&self, qkv: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let causal = self.config.attention == AttentionMask::Causal;
        let mut y = vec![0.0; n * d];
        let mut probs = vec![0.0; heads * n * n];
        for h in 0..heads {
            for t in 0..n {
                let q = &qkv[t * 3 * d + h * hd..t * 3 * d + (h + 1) * hd];
                let span = if causal { t + 1 } else { n };
                let row = &mut probs[(h * n + t) * n..(h * n + t) * n + span];
                for (s, p) in row.iter_mut().enumerate() {
                    let k = &qkv[s * 3 * d + d + h * hd..s * 3 * d + d + (h + 1) * hd];
                    *p = crate::ops::dot(q, k) * scale;
                }
                softmax_in_place(row);
                let out = &mut y[t * d + h * hd..t * d + (h + 1) * hd];
                for (s, &p) in row.iter().enumerate() {
                    let v = &qkv[s * 3 * d + 2 * d + h * hd..s * 3 * d + 2 * d + (h + 1) * hd];
                    for (o, vv) in out.iter_mut().zip(v) {
                        *o += p * vv;
                    }
                }
            }
        }
        (y, probs)
    }

    fn attention_backward(&self, d_y: &[f64], qkv: &[f64], probs: &[f64], n: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let causal = self.config.attention == AttentionMask::Causal;
        let mut d_qkv = vec![0.0; n * 3 * d];
        let mut d_p = vec![0.0; n];
        for h in 0..heads {
            for t in 0..n {
                let span = if causal { t + 1 } else { n };
                let row = &probs[(h * n + t) * n..(h * n + t) * n + span];
                let dy = &d_y[t * d + h * hd..t * d + (h + 1) * hd];
                for s in 0..span {
                    let v_off = s * 3 * d + 2 * d + h * hd;
                    d_p[s] = crate::ops::dot(dy, &qkv[v_off..v_off + hd]);
                    for (dv, g) in d_qkv[v_off..v_off + hd].iter_mut().zip(dy) {
                        *dv += row[s] * g;
                    }
                }
                let mix: f64 = (0..span).map(|s| row[s] * d_p[s]).sum();
                let q_off = t * 3 * d + h * hd;
                for s in 0..span {
                    let ds = row[s] * (d_p[s] - mix) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let k_off = s * 3 * d + d + h * hd;
                    for j in 0..hd {
                        d_qkv[q_off + j] += ds * qkv[k_off + j];
                        d_qkv[k_off + j] += ds * qkv[q_off + j];
                    }
                }
            }
        }
        d_qkv
    }

    /// Back-propagates `d_hidden`, accumulating trainable gradients; returns
    /// the gradient with respect to the prompt rows.
    pub fn backward(&self, store: &ParamStore, cache: &BackboneCache, d_hidden: &Matrix, grads: &mut Grads) -> Matrix {
        let (n, d) = (cache.rows, self.config.d_model);
        let mut dx = layer_norm_backward(
            &d_hidden.data,
            &cache.x_last,
            &cache.lnf_mean,
            &cache.lnf_rstd,
            n,
            d,
            store.get(self.ln_f_w),
            None,
            None,
        );
        accumulate_ln(grads, self.ln_f_w, self.ln_f_b, &d_hidden.data, &cache.x_last, &cache.lnf_mean, &cache.lnf_rstd, n, d);
        for (ids, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (gw, gb) = grads.pair(ids.fc_proj_w, ids.fc_proj_b);
            let d_act = linear_backward(&dx, &c.fc_act, n, 4 * d, store.get(ids.fc_proj_w), d, gw, gb);
            let d_fc: Vec<f64> = d_act.iter().zip(&c.fc).map(|(g, &v)| g * gelu_grad(v)).collect();
            let (gw, gb) = grads.pair(ids.fc_w, ids.fc_b);
            let d_ln2 = linear_backward(&d_fc, &c.ln2, n, d, store.get(ids.fc_w), 4 * d, gw, gb);
            let d_mid = layer_norm_backward(&d_ln2, &c.x_mid, &c.ln2_mean, &c.ln2_rstd, n, d, store.get(ids.ln2_w), None, None);
            accumulate_ln(grads, ids.ln2_w, ids.ln2_b, &d_ln2, &c.x_mid, &c.ln2_mean, &c.ln2_rstd, n, d);
            for (a, b) in dx.iter_mut().zip(&d_mid) {
                *a += b;
            }
            let (gw, gb) = grads.pair(ids.proj_w, ids.proj_b);
            let d_att = linear_backward(&dx, &c.att_y, n, d, store.get(ids.proj_w), d, gw, gb);
            let d_qkv = self.attention_backward(&d_att, &c.qkv, &c.probs, n);
            let (gw, gb) = grads.pair(ids.attn_w, ids.attn_b);
            let d_ln1 = linear_backward(&d_qkv, &c.ln1, n, d, store.get(ids.attn_w), 3 * d, gw, gb);
            let d_in = layer_norm_backward(&d_ln1, &c.x_in, &c.ln1_mean, &c.ln1_rstd, n, d, store.get(ids.ln1_w), None, None);
            accumulate_ln(grads, ids.ln1_w, ids.ln1_b, &d_ln1, &c.x_in, &c.ln1_mean, &c.ln1_rstd, n, d);
            for (a, b) in dx.iter_mut().zip(&d_in) {
                *a += b;
            }
        }
        if let Some(g) = grads.slot(self.wpe) {
            for (gv, v) in g.iter_mut().zip(&dx) {
                *gv += v;
            }
        }
        Matrix { rows: n, cols: d, data: dx }
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_ln(
    grads: &mut Grads,
    w: ParamId,
    b: ParamId,
    dy: &[f64],
    x: &[f64],
    mean: &[f64],
    rstd: &[f64],
    n: usize,
    d: usize,
) {
    if let Some(g) = grads.slot(w) {
        for r in 0..n {
            for i in 0..d {
                g[i] += (x[r * d + i] - mean[r]) * rstd[r] * dy[r * d + i];
            }
        }
    }
    if let Some(g) = grads.slot(b) {
        for r in 0..n {
            for i in 0..d {
                g[i] += dy[r * d + i];
            }
        }
    }
}

/// Mean over the batch of the per-sample squared error summed over the horizon.
pub fn forecast_loss(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("forecast batch"));
    }
    if predictions.len() != targets.len() {
        return Err(shape_err("forecast batch", targets.len(), predictions.len()));
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(shape_err("forecast length", t.len(), p.len()));
        }
        total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / predictions.len() as f64)
}
