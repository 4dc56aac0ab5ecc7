//! Optimization loop, evaluation and the seeded synthetic benchmark.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{LrSchedule, RunConfig};
use crate::data::{reassemble, Frequency, M4Series, SeriesFrame, WindowSample};
use crate::error::{Error, Result};
use crate::metrics::{mae, mase_scaled, mse, owa, seasonal_naive, smape, MaseScale};
use crate::model::{Example, Model};
use crate::params::{Grads, ParamStore};

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_forecast: f64,
    pub loss_nncl: f64,
    pub loss_proto: f64,
    pub loss_total: f64,
}

/// Adam over the trainable tensors of a [`ParamStore`]; frozen tensors are
/// never touched.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = |p: &crate::params::Param| if p.trainable { vec![0.0; p.numel()] } else { Vec::new() };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: store.iter().map(|(_, p)| zeros(p)).collect(),
            v: store.iter().map(|(_, p)| zeros(p)).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for i in 0..p.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Learning rate at `step` (0-based) within `epoch`.
pub fn learning_rate(config: &RunConfig, step: usize, epoch: usize, planned_steps: usize) -> f64 {
    match config.lr_schedule {
        LrSchedule::Constant => config.learning_rate,
        LrSchedule::Cosine => {
            let frac = step as f64 / planned_steps.max(1) as f64;
            0.5 * config.learning_rate * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos())
        }
        LrSchedule::Step => config.learning_rate * 0.5f64.powi(epoch as i32),
    }
}

fn clip(grads: &mut Grads, store: &ParamStore, max_norm: f64) {
    let norm: f64 = store
        .iter()
        .map(|(id, _)| grads.get(id).iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

fn examples<'a>(samples: &[&'a WindowSample]) -> Vec<Example<'a>> {
    samples
        .iter()
        .map(|s| Example {
            channel: s.channel_index,
            input: &s.input,
            target: &s.target,
        })
        .collect()
}

/// One optimizer step followed by pushing the updated prototypes into the
/// support queue.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut Adam,
    batch: &[&WindowSample],
    step: usize,
    epoch: usize,
    lr: f64,
) -> Result<StepReport> {
    let out = model.loss_and_grad(&examples(batch), step).map_err(|e| match e {
        Error::NonFinite(what) => Error::Divergence {
            step,
            detail: format!("non-finite {what}"),
        },
        other => other,
    })?;
    if !out.loss_total.is_finite() || !out.grads.all_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!(
                "forecast {} nncl {} proto {} total {}",
                out.loss_forecast, out.loss_nncl, out.loss_proto, out.loss_total
            ),
        });
    }
    let mut grads = out.grads;
    if let Some(c) = model.config.grad_clip {
        clip(&mut grads, &model.store, c);
    }
    optimizer.step(&mut model.store, &grads, lr);
    model.push_prototypes()?;
    Ok(StepReport {
        step,
        epoch,
        lr,
        loss_forecast: out.loss_forecast,
        loss_nncl: out.loss_nncl,
        loss_proto: out.loss_proto,
        loss_total: out.loss_total,
    })
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Best-validation model, or the final one without validation data.
    pub model: Model,
    pub history: Vec<StepReport>,
    /// `(steps completed, validation MSE)` per validation round.
    pub validation: Vec<(usize, f64)>,
    pub best_val_mse: Option<f64>,
    pub stopped_early: bool,
}

/// Mean squared error of the model over windows, on the original scale.
pub fn window_mse(model: &Model, samples: &[WindowSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation windows"));
    }
    let inputs: Vec<(usize, &[f64])> = samples.iter().map(|s| (s.channel_index, s.input.as_slice())).collect();
    let preds = model.predict(&inputs)?;
    let y: Vec<f64> = samples.iter().flat_map(|s| s.target.iter().copied()).collect();
    let y_hat: Vec<f64> = preds.into_iter().flatten().collect();
    mse(&y, &y_hat)
}

/// Trains a fresh model. Deterministic for a fixed `config.seed`.
pub fn fit(config: &RunConfig, n_channels: usize, train: &[WindowSample], val: &[WindowSample]) -> Result<FitResult> {
    fit_model(Model::new(config.clone(), n_channels)?, train, val)
}

/// Trains `model` in place of a fresh one.
pub fn fit_model(mut model: Model, train: &[WindowSample], val: &[WindowSample]) -> Result<FitResult> {
    let config = model.config.clone();
    let mut result = FitResult {
        model: model.clone(),
        history: Vec::new(),
        validation: Vec::new(),
        best_val_mse: None,
        stopped_early: false,
    };
    if config.epochs == 0 || config.max_steps == Some(0) {
        return Ok(result);
    }
    if train.is_empty() {
        return Err(Error::Empty("training windows"));
    }
    let mut optimizer = Adam::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let per_epoch = train.len().div_ceil(config.batch_size);
    let planned = config.max_steps.unwrap_or(usize::MAX).min(per_epoch * config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut stale = 0;

    let mut validate = |model: &Model, step: usize, result: &mut FitResult| -> Result<bool> {
        if val.is_empty() {
            return Ok(false);
        }
        let v = window_mse(model, val)?;
        result.validation.push((step, v));
        if result.best_val_mse.is_none_or(|b| v < b) {
            result.best_val_mse = Some(v);
            result.model = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        Ok(config.patience.is_some_and(|p| stale >= p))
    };

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &train[i]).collect();
            let lr = learning_rate(&config, step, epoch, planned);
            result.history.push(train_step(&mut model, &mut optimizer, &batch, step, epoch, lr)?);
            step += 1;
            if step >= planned {
                break 'epochs;
            }
            if config.eval_every.is_some_and(|e| step % e == 0) && validate(&model, step, &mut result)? {
                result.stopped_early = true;
                break 'epochs;
            }
        }
        if validate(&model, step, &mut result)? {
            result.stopped_early = true;
            break;
        }
    }
    if step >= planned && !result.stopped_early && result.validation.last().is_none_or(|v| v.0 != step) {
        validate(&model, step, &mut result)?;
    }
    if val.is_empty() {
        result.model = model;
    }
    Ok(result)
}

pub fn history_csv(history: &[StepReport]) -> String {
    let mut out = String::from("step,epoch,lr,loss_forecast,loss_nncl,loss_proto,loss_total\n");
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.epoch, r.lr, r.loss_forecast, r.loss_nncl, r.loss_proto, r.loss_total
        )
        .expect("string write");
    }
    out
}

pub fn write_history(history: &[StepReport], path: &Path) -> Result<()> {
    std::fs::write(path, history_csv(history))?;
    Ok(())
}

/// Anything that maps `(channel, look-back window)` pairs to forecasts.
pub trait Forecaster: Sync {
    fn lookback(&self) -> usize;
    fn horizon(&self) -> usize;
    fn forecast(&self, inputs: &[(usize, &[f64])]) -> Result<Vec<Vec<f64>>>;
}

impl Forecaster for Model {
    fn lookback(&self) -> usize {
        self.config.seq_len
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn forecast(&self, inputs: &[(usize, &[f64])]) -> Result<Vec<Vec<f64>>> {
        self.predict(inputs)
    }
}

/// Repeats the last observed season of the look-back window.
#[derive(Clone, Copy, Debug)]
pub struct SeasonalNaive {
    pub lookback: usize,
    pub horizon: usize,
    pub period: usize,
}

impl Forecaster for SeasonalNaive {
    fn lookback(&self) -> usize {
        self.lookback
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, inputs: &[(usize, &[f64])]) -> Result<Vec<Vec<f64>>> {
        inputs
            .iter()
            .map(|(_, x)| seasonal_naive(x, self.period, self.horizon))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<HorizonMetrics>,
    pub avg_mse: f64,
    pub avg_mae: f64,
    pub windows: usize,
}

/// Per-horizon MSE/MAE over the whole test stream. Forecasts are reassembled
/// into one `M × H` block per window start; horizon `h` scores the first `h`
/// steps of every block.
pub fn evaluate<F: Forecaster + ?Sized>(
    forecaster: &F,
    test: &[WindowSample],
    n_channels: usize,
    horizons: &[usize],
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("test windows"));
    }
    if horizons.is_empty() {
        return Err(Error::Empty("horizon list"));
    }
    if let Some(&h) = horizons.iter().find(|&&h| h == 0 || h > forecaster.horizon()) {
        return Err(Error::InvalidArgument(format!(
            "horizon {h} outside 1..={} supported by the model",
            forecaster.horizon()
        )));
    }
    let inputs: Vec<(usize, &[f64])> = test.iter().map(|s| (s.channel_index, s.input.as_slice())).collect();
    let preds = forecaster.forecast(&inputs)?;
    let keyed_pred: Vec<(usize, usize, Vec<f64>)> = test
        .iter()
        .zip(preds)
        .map(|(s, p)| (s.channel_index, s.window_start, p))
        .collect();
    let keyed_true: Vec<(usize, usize, Vec<f64>)> = test
        .iter()
        .map(|s| (s.channel_index, s.window_start, s.target.clone()))
        .collect();
    let pred_blocks = reassemble(&keyed_pred, n_channels)?;
    let true_blocks = reassemble(&keyed_true, n_channels)?;
    let mut rows = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let mut y = Vec::new();
        let mut y_hat = Vec::new();
        for (start, block) in &true_blocks {
            for (c, row) in block.iter().enumerate() {
                if row.len() < h {
                    return Err(Error::InvalidArgument(format!("targets shorter than horizon {h}")));
                }
                y.extend_from_slice(&row[..h]);
                y_hat.extend_from_slice(&pred_blocks[start][c][..h]);
            }
        }
        rows.push(HorizonMetrics {
            horizon: h,
            mse: mse(&y, &y_hat)?,
            mae: mae(&y, &y_hat)?,
        });
    }
    let n = rows.len() as f64;
    Ok(EvalReport {
        avg_mse: rows.iter().map(|r| r.mse).sum::<f64>() / n,
        avg_mae: rows.iter().map(|r| r.mae).sum::<f64>() / n,
        rows,
        windows: true_blocks.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortTermReport {
    pub smape: f64,
    pub mase: f64,
    pub owa: f64,
    pub naive_smape: f64,
    pub naive_mase: f64,
    pub series: usize,
}

/// SMAPE, MASE and OWA over M4-style series. The last `horizon` values of
/// each series are held out; the seasonal-naive forecast of the remaining
/// history is the OWA reference.
pub fn evaluate_short_term<F: Forecaster + ?Sized>(
    forecaster: &F,
    series: &[M4Series],
    scale: MaseScale,
) -> Result<ShortTermReport> {
    if series.is_empty() {
        return Err(Error::Empty("short-term series"));
    }
    let t = forecaster.lookback();
    let mut windows = Vec::with_capacity(series.len());
    for s in series {
        let h = s.horizon;
        if h == 0 || h > forecaster.horizon() {
            return Err(Error::InvalidArgument(format!(
                "series {} horizon {h} outside 1..={}",
                s.id,
                forecaster.horizon()
            )));
        }
        if s.values.len() <= h {
            return Err(Error::TooShort(format!("series {} has no history before its horizon", s.id)));
        }
        let history = &s.values[..s.values.len() - h];
        let tail = &history[history.len().saturating_sub(t)..];
        let mut input = vec![tail[0]; t - tail.len()];
        input.extend_from_slice(tail);
        windows.push(input);
    }
    let inputs: Vec<(usize, &[f64])> = windows.iter().map(|w| (0, w.as_slice())).collect();
    let preds = forecaster.forecast(&inputs)?;
    let (mut sm, mut ma, mut nsm, mut nma) = (0.0, 0.0, 0.0, 0.0);
    for (s, p) in series.iter().zip(&preds) {
        let h = s.horizon;
        let split = s.values.len() - h;
        let (history, target) = s.values.split_at(split);
        let period = s.frequency.seasonal_period();
        let naive = seasonal_naive(history, period.min(history.len()), h)?;
        sm += smape(target, &p[..h])?;
        ma += mase_scaled(target, &p[..h], history, period, scale)?;
        nsm += smape(target, &naive)?;
        nma += mase_scaled(target, &naive, history, period, scale)?;
    }
    let n = series.len() as f64;
    let (sm, ma, nsm, nma) = (sm / n, ma / n, nsm / n, nma / n);
    Ok(ShortTermReport {
        smape: sm,
        mase: ma,
        owa: owa(sm, ma, nsm, nma)?,
        naive_smape: nsm,
        naive_mase: nma,
        series: series.len(),
    })
}

/// Parameters of the synthetic benchmark: per channel, two sinusoids plus a
/// linear trend plus Gaussian noise, on an hourly grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub len: usize,
    pub channels: usize,
    /// Dominant period first.
    pub periods: [f64; 2],
    pub amplitudes: [f64; 2],
    pub trend: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            len: 10_000,
            channels: 2,
            periods: [24.0, 60.0],
            amplitudes: [1.0, 0.5],
            trend: 2e-4,
            noise: 0.2,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// The dominant period as a seasonal lag.
    pub fn dominant_period(&self) -> usize {
        self.periods[0].round() as usize
    }
}

pub fn synthetic_frame(spec: &SyntheticSpec) -> Result<SeriesFrame> {
    if spec.len == 0 || spec.channels == 0 {
        return Err(Error::Empty("synthetic series"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise)
        .map_err(|e| Error::InvalidArgument(format!("noise level {}: {e}", spec.noise)))?;
    let tau = std::f64::consts::TAU;
    let values = (0..spec.channels)
        .map(|c| {
            let phase = tau * c as f64 / spec.channels as f64;
            let level = c as f64;
            (0..spec.len)
                .map(|t| {
                    let t = t as f64;
                    level
                        + spec.amplitudes[0] * (tau * t / spec.periods[0] + phase).sin()
                        + spec.amplitudes[1] * (tau * t / spec.periods[1] + 2.0 * phase).sin()
                        + spec.trend * t
                        + noise.sample(&mut rng)
                })
                .collect()
        })
        .collect();
    let start = 1_577_836_800; // 2020-01-01T00:00:00Z
    let timestamps = (0..spec.len as i64).map(|i| start + 3_600 * i).collect();
    let names = (0..spec.channels).map(|c| format!("series_{c}")).collect();
    SeriesFrame::new(values, timestamps, Frequency::Hourly, names)
}
