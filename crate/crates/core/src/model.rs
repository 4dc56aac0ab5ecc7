//! The full forecaster: RevIN, patch and series embeddings, prototype
//! retrieval, the prompted backbone and the output head, with a hand-written
//! backward pass over a batch.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

use crate::archive::{Archive, DType};
use crate::backbone::{self, formulate_prompt, Backbone};
use crate::config::RunConfig;
use crate::embed::{
    embed_patches, embed_patches_backward, patchify, patchify_backward, series_embedding,
    series_embedding_backward,
};
use crate::error::{shape_err, Error, Result};
use crate::normalize::{denormalize, denormalize_backward, normalize, normalize_backward, RevinState};
use crate::ops::{linear, linear_backward, Matrix};
use crate::params::{layout_counts, Grads, ParamId, ParamSpec, ParamStore};
use crate::prototypes::{proto_loss_with_grad, PrototypeBank, Vocabulary};
use crate::support::{nncl_loss, top_k_rows, SupportQueue};

pub mod names {
    pub const REVIN_GAMMA: &str = "revin/gamma";
    pub const REVIN_BETA: &str = "revin/beta";
    pub const PATCH_WEIGHT: &str = "patch/weight";
    pub const PATCH_BIAS: &str = "patch/bias";
    pub const SERIES_WEIGHT: &str = "series/weight";
    pub const SERIES_BIAS: &str = "series/bias";
    pub const PROTOTYPES: &str = "tctp/E";
    pub const HEAD_WEIGHT: &str = "head/weight";
    pub const HEAD_BIAS: &str = "head/bias";
    pub const QUEUE: &str = "support/Q";
    pub const VOCABULARY: &str = "vocab/W";
}

/// Every parameter of a model built from `config` for `n_channels` channels,
/// in registration order.
pub fn param_layout(config: &RunConfig, n_channels: usize) -> Vec<ParamSpec> {
    let d = config.d_model;
    let mut out = Vec::new();
    if config.revin_affine {
        out.push(ParamSpec::new(names::REVIN_GAMMA, &[n_channels], true));
        out.push(ParamSpec::new(names::REVIN_BETA, &[n_channels], true));
    }
    let series_in = config.pooling.input_width(config.n_patches(), d);
    out.extend([
        ParamSpec::new(names::PATCH_WEIGHT, &[d, config.patch_len], true),
        ParamSpec::new(names::PATCH_BIAS, &[d], true),
        ParamSpec::new(names::SERIES_WEIGHT, &[d, series_in], true),
        ParamSpec::new(names::SERIES_BIAS, &[d], true),
    ]);
    out.extend(config.backbone().param_specs());
    out.push(ParamSpec::new(names::PROTOTYPES, &[config.n_prototypes, d], true));
    out.push(ParamSpec::new(names::HEAD_WEIGHT, &[config.horizon, config.head_rows() * d], true));
    out.push(ParamSpec::new(names::HEAD_BIAS, &[config.horizon], true));
    out
}

/// `(trainable, total)` parameter counts from configuration arithmetic alone.
pub fn layout_parameter_counts(config: &RunConfig, n_channels: usize) -> (usize, usize) {
    layout_counts(&param_layout(config, n_channels))
}

#[derive(Clone, Debug)]
struct Ids {
    revin_gamma: Option<ParamId>,
    revin_beta: Option<ParamId>,
    patch_w: ParamId,
    patch_b: ParamId,
    series_w: ParamId,
    series_b: ParamId,
    prototypes: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::InvalidArgument(format!("parameter {name} not registered")))
}

impl Ids {
    fn bind(store: &ParamStore, revin: bool) -> Result<Self> {
        Ok(Self {
            revin_gamma: if revin { Some(lookup(store, names::REVIN_GAMMA)?) } else { None },
            revin_beta: if revin { Some(lookup(store, names::REVIN_BETA)?) } else { None },
            patch_w: lookup(store, names::PATCH_WEIGHT)?,
            patch_b: lookup(store, names::PATCH_BIAS)?,
            series_w: lookup(store, names::SERIES_WEIGHT)?,
            series_b: lookup(store, names::SERIES_BIAS)?,
            prototypes: lookup(store, names::PROTOTYPES)?,
            head_w: lookup(store, names::HEAD_WEIGHT)?,
            head_b: lookup(store, names::HEAD_BIAS)?,
        })
    }
}

/// One training or inference example: channel index, look-back window and,
/// for training, the target.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub channel: usize,
    pub input: &'a [f64],
    pub target: &'a [f64],
}

/// Losses and trainable gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub loss_forecast: f64,
    pub loss_nncl: f64,
    pub loss_proto: f64,
    pub loss_total: f64,
    pub grads: Grads,
    pub predictions: Vec<Vec<f64>>,
}

/// Where the prompt's neighbor rows came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NeighborSource {
    /// Snapshots in the support queue; constants for the gradient.
    Queue(Vec<usize>),
    /// Rows of the live prototype bank; they receive gradient.
    Bank(Vec<usize>),
}

struct Prepared {
    state: RevinState,
    patches: Matrix,
    p: Matrix,
    z: Vec<f64>,
}

struct SampleResult {
    prediction: Vec<f64>,
    squared_error: f64,
    grads: Option<Grads>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: RunConfig,
    pub n_channels: usize,
    pub store: ParamStore,
    pub queue: SupportQueue,
    pub backbone: Backbone,
    ids: Ids,
}

fn uniform_fill<R: Rng>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl Model {
    /// Freshly initialized model; all randomness comes from `config.seed`.
    pub fn new(config: RunConfig, n_channels: usize) -> Result<Self> {
        config.validate()?;
        if n_channels == 0 {
            return Err(Error::InvalidArgument("a model needs at least one channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let mut store = ParamStore::new();
        if config.revin_affine {
            store.register(names::REVIN_GAMMA, &[n_channels], vec![1.0; n_channels], true)?;
            store.register(names::REVIN_BETA, &[n_channels], vec![0.0; n_channels], true)?;
        }
        let c = config.patch_len;
        store.register(names::PATCH_WEIGHT, &[d, c], uniform_fill(d * c, c, &mut rng), true)?;
        store.register(names::PATCH_BIAS, &[d], uniform_fill(d, c, &mut rng), true)?;
        let series_in = config.pooling.input_width(config.n_patches(), d);
        store.register(names::SERIES_WEIGHT, &[d, series_in], uniform_fill(d * series_in, series_in, &mut rng), true)?;
        store.register(names::SERIES_BIAS, &[d], uniform_fill(d, series_in, &mut rng), true)?;

        let backbone = Backbone::register(&mut store, config.backbone(), &mut rng)?;
        let vocab = Vocabulary::toy(config.vocab_size, d, config.vocab_std, &mut rng);
        store.get_mut(backbone.wte).copy_from_slice(&vocab.embeddings.data);
        let bank = PrototypeBank::sample_from(&vocab, config.n_prototypes, &mut rng)?;
        store.register(names::PROTOTYPES, &[config.n_prototypes, d], bank.embeddings.data, true)?;

        let head_in = config.head_rows() * d;
        let h = config.horizon;
        store.register(names::HEAD_WEIGHT, &[h, head_in], uniform_fill(h * head_in, head_in, &mut rng), true)?;
        store.register(names::HEAD_BIAS, &[h], uniform_fill(h, head_in, &mut rng), true)?;

        let ids = Ids::bind(&store, config.revin_affine)?;
        let queue = SupportQueue::new(config.queue_len, d)?;
        Ok(Self {
            config,
            n_channels,
            store,
            queue,
            backbone,
            ids,
        })
    }

    /// Reassembles a model from stored parameters and queue contents.
    pub fn from_parts(config: RunConfig, n_channels: usize, store: ParamStore, queue: SupportQueue) -> Result<Self> {
        config.validate()?;
        for spec in param_layout(&config, n_channels) {
            let p = store
                .by_name(&spec.name)
                .ok_or_else(|| Error::Archive(format!("parameter {} missing", spec.name)))?;
            if p.shape != spec.shape || p.trainable != spec.trainable {
                return Err(shape_err("stored parameter", format!("{} {:?}", spec.name, spec.shape), format!("{:?}", p.shape)));
            }
        }
        if queue.width() != config.d_model || queue.capacity() != config.queue_len {
            return Err(shape_err(
                "support queue",
                format!("{}x{}", config.queue_len, config.d_model),
                format!("{}x{}", queue.capacity(), queue.width()),
            ));
        }
        let backbone = Backbone::bind(&store, config.backbone())?;
        let ids = Ids::bind(&store, config.revin_affine)?;
        Ok(Self {
            config,
            n_channels,
            store,
            queue,
            backbone,
            ids,
        })
    }

    pub fn parameter_counts(&self) -> (usize, usize) {
        self.store.counts()
    }

    /// Names and sizes of the trainable tensors.
    pub fn trainable_parameters(&self) -> Vec<(String, usize)> {
        self.store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| (p.name.clone(), p.numel()))
            .collect()
    }

    pub fn prototypes(&self) -> Matrix {
        Matrix {
            rows: self.config.n_prototypes,
            cols: self.config.d_model,
            data: self.store.get(self.ids.prototypes).to_vec(),
        }
    }

    pub fn vocabulary(&self) -> Matrix {
        Matrix {
            rows: self.config.vocab_size,
            cols: self.config.d_model,
            data: self.store.get(self.backbone.wte).to_vec(),
        }
    }

    pub fn prototype_id(&self) -> ParamId {
        self.ids.prototypes
    }

    /// Appends the current prototype bank to the support queue.
    pub fn push_prototypes(&mut self) -> Result<()> {
        let e = self.prototypes();
        self.queue.push_batch(&e)
    }

    fn revin(&self, channel: usize) -> (f64, f64) {
        match (self.ids.revin_gamma, self.ids.revin_beta) {
            (Some(g), Some(b)) => (self.store.get(g)[channel], self.store.get(b)[channel]),
            _ => (1.0, 0.0),
        }
    }

    fn prepare(&self, channel: usize, input: &[f64]) -> Result<Prepared> {
        if channel >= self.n_channels {
            return Err(Error::InvalidArgument(format!(
                "channel {channel} out of range for a {}-channel model",
                self.n_channels
            )));
        }
        if input.len() != self.config.seq_len {
            return Err(shape_err("input window", self.config.seq_len, input.len()));
        }
        let (gamma, beta) = self.revin(channel);
        let (xn, state) = normalize(input, gamma, beta, self.config.revin_eps)?;
        let patches = patchify(&xn, &self.config.patch())?;
        let p = embed_patches(
            &patches,
            self.store.get(self.ids.patch_w),
            self.store.get(self.ids.patch_b),
            self.config.d_model,
        )?;
        let z = series_embedding(
            &p,
            self.store.get(self.ids.series_w),
            self.store.get(self.ids.series_b),
            self.config.pooling,
        )?;
        Ok(Prepared { state, patches, p, z })
    }

    /// Whether retrieval reads the support queue (and the contrastive term is
    /// active) rather than the live prototype bank.
    pub fn uses_queue(&self) -> bool {
        !self.config.disable_nncl && self.queue.fill() >= self.config.top_k
    }

    /// The `k` neighbors of `z` and where they came from.
    pub fn retrieve(&self, z: &[f64]) -> Result<(NeighborSource, Matrix)> {
        let k = self.config.top_k;
        if self.uses_queue() {
            let (idx, rows) = self.queue.top_k_nn(z, k)?;
            Ok((NeighborSource::Queue(idx), rows))
        } else {
            let bank = self.prototypes();
            let idx = top_k_rows(z, &bank, k);
            let mut rows = Matrix::zeros(k, bank.cols);
            for (o, &i) in idx.iter().enumerate() {
                rows.row_mut(o).copy_from_slice(bank.row(i));
            }
            Ok((NeighborSource::Bank(idx), rows))
        }
    }

    /// Head over the backbone output followed by RevIN inversion; returns the
    /// normalized-scale output too.
    pub fn project(&self, hidden: &Matrix, state: &RevinState) -> Result<(Vec<f64>, Vec<f64>)> {
        let width = self.config.head_rows() * self.config.d_model;
        if hidden.cols != self.config.d_model || hidden.data.len() < width {
            return Err(shape_err(
                "projection input",
                format!("at least {} rows of width {}", self.config.head_rows(), self.config.d_model),
                format!("{}x{}", hidden.rows, hidden.cols),
            ));
        }
        let y_norm = linear(
            &hidden.data[..width],
            1,
            width,
            self.store.get(self.ids.head_w),
            Some(self.store.get(self.ids.head_b)),
            self.config.horizon,
        );
        let y = denormalize(&y_norm, state)?;
        Ok((y, y_norm))
    }

    #[allow(clippy::too_many_arguments)]
    fn sample_pass(
        &self,
        channel: usize,
        input: &[f64],
        prep: &Prepared,
        source: &NeighborSource,
        neighbors: &Matrix,
        target: Option<&[f64]>,
        d_z: Option<&[f64]>,
        inv_batch: f64,
    ) -> Result<SampleResult> {
        let cfg = &self.config;
        let (n, d) = (prep.p.rows, cfg.d_model);
        let prompt = formulate_prompt(&prep.p, neighbors)?;
        let (hidden, cache) = self.backbone.forward(&self.store, &prompt)?;
        let (prediction, y_norm) = self.project(&hidden, &prep.state)?;
        let Some(target) = target else {
            return Ok(SampleResult {
                prediction,
                squared_error: 0.0,
                grads: None,
            });
        };
        if target.len() != cfg.horizon {
            return Err(shape_err("target", cfg.horizon, target.len()));
        }
        let squared_error: f64 = prediction.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let dy: Vec<f64> = prediction
            .iter()
            .zip(target)
            .map(|(a, b)| 2.0 * (a - b) * inv_batch)
            .collect();

        let mut grads = Grads::zeros_like(&self.store);
        let (dy_norm, mut d_gamma, mut d_beta) = denormalize_backward(&dy, &y_norm, &prep.state);
        let width = cfg.head_rows() * d;
        let (gw, gb) = grads.pair(self.ids.head_w, self.ids.head_b);
        let d_flat = linear_backward(
            &dy_norm,
            &hidden.data[..width],
            1,
            width,
            self.store.get(self.ids.head_w),
            cfg.horizon,
            gw,
            gb,
        );
        let mut d_hidden = Matrix::zeros(hidden.rows, d);
        d_hidden.data[..width].copy_from_slice(&d_flat);
        let d_prompt = self.backbone.backward(&self.store, &cache, &d_hidden, &mut grads);

        if let NeighborSource::Bank(idx) = source {
            let g = grads.slot(self.ids.prototypes).expect("prototypes are trainable");
            for (j, &u) in idx.iter().enumerate() {
                for (gv, v) in g[u * d..(u + 1) * d].iter_mut().zip(d_prompt.row(n + j)) {
                    *gv += v;
                }
            }
        }
        let mut d_p = Matrix {
            rows: n,
            cols: d,
            data: d_prompt.data[..n * d].to_vec(),
        };
        if let Some(dz) = d_z {
            let (gw, gb) = grads.pair(self.ids.series_w, self.ids.series_b);
            let extra = series_embedding_backward(dz, &prep.p, self.store.get(self.ids.series_w), cfg.pooling, gw, gb);
            for (a, b) in d_p.data.iter_mut().zip(&extra.data) {
                *a += b;
            }
        }
        let (gw, gb) = grads.pair(self.ids.patch_w, self.ids.patch_b);
        let d_patches = embed_patches_backward(&d_p, &prep.patches, self.store.get(self.ids.patch_w), gw, gb);
        let d_xn = patchify_backward(&d_patches, cfg.seq_len, &cfg.patch());
        let (g2, b2) = normalize_backward(&d_xn, input, &prep.state);
        d_gamma += g2;
        d_beta += b2;
        if let (Some(g), Some(b)) = (self.ids.revin_gamma, self.ids.revin_beta) {
            grads.slot(g).expect("trainable")[channel] += d_gamma;
            grads.slot(b).expect("trainable")[channel] += d_beta;
        }
        Ok(SampleResult {
            prediction,
            squared_error,
            grads: Some(grads),
        })
    }

    /// Vocabulary rows evaluated by the prototype loss at `step`.
    fn proto_rows(&self, step: usize) -> Option<Vec<usize>> {
        let n = self.config.proto_sample?;
        if n >= self.config.vocab_size {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 + step as u64);
        let mut rows = rand::seq::index::sample(&mut rng, self.config.vocab_size, n).into_vec();
        rows.sort_unstable();
        Some(rows)
    }

    /// Total loss `forecast + λ (nncl + proto)` and its gradient with respect
    /// to every trainable parameter. `step` seeds the vocabulary subsample.
    pub fn loss_and_grad(&self, batch: &[Example<'_>], step: usize) -> Result<BatchOutput> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let cfg = &self.config;
        let lambda = cfg.loss_weight;
        let prepared: Vec<Prepared> = batch
            .par_iter()
            .map(|ex| self.prepare(ex.channel, ex.input))
            .collect::<Result<_>>()?;
        let retrieved: Vec<(NeighborSource, Matrix)> =
            prepared.par_iter().map(|p| self.retrieve(&p.z)).collect::<Result<_>>()?;

        let (loss_nncl, d_z) = if self.uses_queue() {
            let mut z = Matrix::zeros(batch.len(), cfg.d_model);
            for (i, p) in prepared.iter().enumerate() {
                z.row_mut(i).copy_from_slice(&p.z);
            }
            let sets: Vec<Matrix> = retrieved.iter().map(|(_, m)| m.clone()).collect();
            let out = nncl_loss(&z, &sets, cfg.temperature, cfg.nncl_aggregate)?;
            let mut grad = out.grad;
            grad.data.iter_mut().for_each(|g| *g *= lambda);
            (out.loss, Some(grad))
        } else {
            (0.0, None)
        };

        let inv_batch = 1.0 / batch.len() as f64;
        let results: Vec<SampleResult> = (0..batch.len())
            .into_par_iter()
            .map(|i| {
                let ex = &batch[i];
                self.sample_pass(
                    ex.channel,
                    ex.input,
                    &prepared[i],
                    &retrieved[i].0,
                    &retrieved[i].1,
                    Some(ex.target),
                    d_z.as_ref().map(|g| g.row(i)),
                    inv_batch,
                )
            })
            .collect::<Result<_>>()?;

        let mut grads = Grads::zeros_like(&self.store);
        let mut loss_forecast = 0.0;
        let mut predictions = Vec::with_capacity(batch.len());
        for r in results {
            loss_forecast += r.squared_error;
            grads.add_assign(r.grads.as_ref().expect("training pass"));
            predictions.push(r.prediction);
        }
        loss_forecast *= inv_batch;

        let loss_proto = if cfg.disable_neighborhood_tctp {
            0.0
        } else {
            let rows = self.proto_rows(step);
            let out = proto_loss_with_grad(&self.vocabulary(), &self.prototypes(), rows.as_deref())?;
            let g = grads.slot(self.ids.prototypes).expect("prototypes are trainable");
            for (a, b) in g.iter_mut().zip(&out.grad.data) {
                *a += lambda * b;
            }
            out.loss
        };

        Ok(BatchOutput {
            loss_forecast,
            loss_nncl,
            loss_proto,
            loss_total: loss_forecast + lambda * (loss_nncl + loss_proto),
            grads,
            predictions,
        })
    }

    /// `H`-step forecasts for `(channel, window)` pairs.
    pub fn predict(&self, inputs: &[(usize, &[f64])]) -> Result<Vec<Vec<f64>>> {
        inputs
            .par_iter()
            .map(|&(channel, input)| {
                let prep = self.prepare(channel, input)?;
                let (source, neighbors) = self.retrieve(&prep.z)?;
                Ok(self
                    .sample_pass(channel, input, &prep, &source, &neighbors, None, None, 1.0)?
                    .prediction)
            })
            .collect()
    }

    /// Series embedding `Z` of one window.
    pub fn embed(&self, channel: usize, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.prepare(channel, input)?.z)
    }

    /// Parameters (as `f64`), queue contents and configuration.
    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        for (_, p) in self.store.iter() {
            a.push(p.name.clone(), &p.shape, DType::F64, &p.data)?;
        }
        let q = self.queue.rows_in_order();
        a.push(names::QUEUE, &[q.rows, q.cols], DType::F64, &q.data)?;
        a.metadata.insert("config".into(), Value::from(self.config.to_toml_string()));
        a.metadata.insert("n_channels".into(), Value::from(self.n_channels));
        Ok(a)
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let config_text = archive
            .metadata
            .get("config")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Archive("checkpoint has no config".into()))?;
        let config = RunConfig::from_toml_str(config_text)?;
        let n_channels = archive
            .metadata
            .get("n_channels")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Archive("checkpoint has no channel count".into()))? as usize;
        let mut store = ParamStore::new();
        for spec in param_layout(&config, n_channels) {
            let t = archive.require(&spec.name)?;
            if t.shape != spec.shape {
                return Err(shape_err("checkpoint tensor", format!("{} {:?}", spec.name, spec.shape), format!("{:?}", t.shape)));
            }
            store.register(spec.name, &spec.shape, t.values.clone(), spec.trainable)?;
        }
        let q = archive.require(names::QUEUE)?;
        let width = q.shape.get(1).copied().unwrap_or(config.d_model);
        let rows = Matrix::from_vec(q.shape.first().copied().unwrap_or(0), width, q.values.clone())?;
        let queue = SupportQueue::from_rows(config.queue_len, &rows)?;
        Self::from_parts(config, n_channels, store, queue)
    }

    /// Copies matching tensors from an archive of converted weights.
    /// `vocab/W` loads into the token embedding. Returns the names loaded.
    pub fn import_weights(&mut self, archive: &Archive) -> Result<Vec<String>> {
        let mut loaded = Vec::new();
        for t in &archive.tensors {
            let name = if t.name == names::VOCABULARY { backbone::names::WTE } else { t.name.as_str() };
            let Some(id) = self.store.id(name) else {
                continue;
            };
            if self.store.param(id).shape != t.shape {
                return Err(shape_err("imported tensor", format!("{name} {:?}", self.store.param(id).shape), format!("{:?}", t.shape)));
            }
            self.store.get_mut(id).copy_from_slice(&t.values);
            loaded.push(name.to_string());
        }
        Ok(loaded)
    }
}

/// Matrices that can be exported for external inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportKind {
    Prototypes,
    Queue,
    Vocabulary,
}

impl std::str::FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prototypes" => Ok(Self::Prototypes),
            "queue" => Ok(Self::Queue),
            "vocabulary" => Ok(Self::Vocabulary),
            other => Err(Error::InvalidArgument(format!(
                "unknown export selector {other}; expected prototypes, queue or vocabulary"
            ))),
        }
    }
}

/// Single-tensor `f32` archive of the selected matrix. An empty queue is an
/// error unless `allow_empty`, in which case a zero-row tensor is written.
pub fn export_embeddings(model: &Model, what: ExportKind, allow_empty: bool) -> Result<Archive> {
    let (name, m) = match what {
        ExportKind::Prototypes => (names::PROTOTYPES, model.prototypes()),
        ExportKind::Vocabulary => (names::VOCABULARY, model.vocabulary()),
        ExportKind::Queue => {
            if model.queue.fill() == 0 && !allow_empty {
                return Err(Error::Empty("support queue"));
            }
            (names::QUEUE, model.queue.rows_in_order())
        }
    };
    let mut a = Archive::new();
    a.push(name, &[m.rows, m.cols], DType::F32, &m.data)?;
    Ok(a)
}
