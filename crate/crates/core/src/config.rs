//! Run configuration: a flat TOML file whose keys mirror [`RunConfig`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{AttentionMask, BackboneConfig};
use crate::data::{CsvSchema, Frequency, MissingPolicy, SplitSpec};
use crate::embed::{patch_count, PatchConfig, Pooling};
use crate::error::{Error, Result};
use crate::metrics::MaseScale;
use crate::support::NeighborAggregate;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay to zero over the planned number of steps.
    Cosine,
    /// Halves the rate after every epoch.
    Step,
}

/// Which backbone output rows feed the output head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// All `N + k` rows.
    #[default]
    All,
    /// Only the `N` patch rows.
    Patches,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Ratio,
    Absolute,
    EttHourly,
    EttMinute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Look-back `T`.
    pub seq_len: usize,
    /// Forecast horizon `H`.
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Prototype count `U`.
    pub n_prototypes: usize,
    /// Support queue capacity `q`, a multiple of `U`.
    pub queue_len: usize,
    pub top_k: usize,
    pub temperature: f64,
    /// Weight `λ` of the auxiliary losses.
    pub loss_weight: f64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    /// Validation rounds without improvement before stopping.
    pub patience: Option<usize>,
    /// Validate every this many steps in addition to every epoch end.
    pub eval_every: Option<usize>,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub few_shot_fraction: Option<f64>,
    pub disable_nncl: bool,
    pub disable_neighborhood_tctp: bool,
    pub pooling: Pooling,
    pub projection: Projection,
    pub attention: AttentionMask,
    pub revin_affine: bool,
    pub revin_eps: f64,
    /// Vocabulary rows per step for the prototype loss; all rows when unset.
    pub proto_sample: Option<usize>,
    pub nncl_aggregate: NeighborAggregate,
    /// Standard deviation of the seeded toy vocabulary.
    pub vocab_std: f64,
    pub split_mode: SplitMode,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub train_end: Option<usize>,
    pub val_end: Option<usize>,
    pub test_end: Option<usize>,
    pub value_columns: Option<Vec<String>>,
    pub missing: MissingPolicy,
    pub frequency: Option<Frequency>,
    /// Seasonal period for baselines and MASE; inferred from the data when unset.
    pub seasonal_period: Option<usize>,
    pub mase_scale: MaseScale,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seq_len: 96,
            horizon: 24,
            patch_len: 16,
            stride: 8,
            d_model: 64,
            n_layers: 3,
            n_heads: 4,
            vocab_size: 1000,
            max_positions: 32,
            n_prototypes: 32,
            queue_len: 320,
            top_k: 4,
            temperature: 0.1,
            loss_weight: 0.01,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Constant,
            batch_size: 16,
            epochs: 10,
            max_steps: None,
            patience: Some(3),
            eval_every: None,
            grad_clip: None,
            seed: 42,
            few_shot_fraction: None,
            disable_nncl: false,
            disable_neighborhood_tctp: false,
            pooling: Pooling::Mean,
            projection: Projection::All,
            attention: AttentionMask::Causal,
            revin_affine: true,
            revin_eps: crate::normalize::DEFAULT_EPS,
            proto_sample: None,
            nncl_aggregate: NeighborAggregate::Mean,
            vocab_std: 0.02,
            split_mode: SplitMode::Ratio,
            train_ratio: 0.7,
            val_ratio: 0.1,
            train_end: None,
            val_end: None,
            test_end: None,
            value_columns: None,
            missing: MissingPolicy::Error,
            frequency: None,
            seasonal_period: None,
            mase_scale: MaseScale::Window,
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Best-effort name of the key a TOML error points at.
fn offending_key(source: &str, err: &toml::de::Error) -> String {
    let msg = err.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    if let Some(span) = err.span() {
        let line_start = source[..span.start].rfind('\n').map_or(0, |i| i + 1);
        let line = source[line_start..].lines().next().unwrap_or("");
        if let Some((key, _)) = line.split_once('=') {
            return key.trim().to_string();
        }
    }
    "<unknown>".to_string()
}

impl RunConfig {
    pub fn from_toml_str(source: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(source).map_err(|e| Error::Config {
            key: offending_key(source, &e),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn patch(&self) -> PatchConfig {
        PatchConfig {
            patch_len: self.patch_len,
            stride: self.stride,
            d_model: self.d_model,
        }
    }

    pub fn n_patches(&self) -> usize {
        patch_count(self.seq_len, self.patch_len, self.stride)
    }

    /// Length of the backbone input: `N + k`.
    pub fn prompt_len(&self) -> usize {
        self.n_patches() + self.top_k
    }

    /// Backbone rows that feed the output head.
    pub fn head_rows(&self) -> usize {
        match self.projection {
            Projection::All => self.prompt_len(),
            Projection::Patches => self.n_patches(),
        }
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            layers: self.n_layers,
            heads: self.n_heads,
            d_model: self.d_model,
            max_positions: self.max_positions,
            vocab_size: self.vocab_size,
            attention: self.attention,
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        Ok(match self.split_mode {
            SplitMode::Ratio => SplitSpec::Ratio {
                train: self.train_ratio,
                val: self.val_ratio,
            },
            SplitMode::Absolute => SplitSpec::Absolute {
                train_end: self.train_end.ok_or_else(|| bad("train_end", "required when split_mode = \"absolute\""))?,
                val_end: self.val_end.ok_or_else(|| bad("val_end", "required when split_mode = \"absolute\""))?,
                test_end: self.test_end,
            },
            SplitMode::EttHourly => SplitSpec::ett_hourly(),
            SplitMode::EttMinute => SplitSpec::ett_minute(),
        })
    }

    pub fn csv_schema(&self) -> CsvSchema {
        CsvSchema {
            value_columns: self.value_columns.clone(),
            missing: self.missing,
            frequency: self.frequency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("horizon", self.horizon),
            ("patch_len", self.patch_len),
            ("stride", self.stride),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("n_prototypes", self.n_prototypes),
            ("queue_len", self.queue_len),
            ("top_k", self.top_k),
            ("batch_size", self.batch_size),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        if self.stride > self.patch_len {
            return Err(bad("stride", format!("must not exceed patch_len {}", self.patch_len)));
        }
        if self.patch_len > self.seq_len {
            return Err(bad("patch_len", format!("must not exceed seq_len {}", self.seq_len)));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(bad("n_heads", format!("must divide d_model {}", self.d_model)));
        }
        if self.max_positions < self.prompt_len() {
            return Err(bad(
                "max_positions",
                format!("must be at least the prompt length {}", self.prompt_len()),
            ));
        }
        if self.n_prototypes >= self.vocab_size {
            return Err(bad("n_prototypes", format!("must be below vocab_size {}", self.vocab_size)));
        }
        if self.top_k > self.n_prototypes {
            return Err(bad("top_k", format!("must not exceed n_prototypes {}", self.n_prototypes)));
        }
        if self.queue_len <= self.n_prototypes || self.queue_len % self.n_prototypes != 0 {
            return Err(bad(
                "queue_len",
                format!("must be a multiple of n_prototypes {} and larger than it", self.n_prototypes),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(bad("temperature", "must be positive"));
        }
        if !(self.loss_weight >= 0.0 && self.loss_weight.is_finite()) {
            return Err(bad("loss_weight", "must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate", "must be positive"));
        }
        if !(self.revin_eps > 0.0) {
            return Err(bad("revin_eps", "must be positive"));
        }
        if !(self.vocab_std > 0.0) {
            return Err(bad("vocab_std", "must be positive"));
        }
        if let Some(f) = self.few_shot_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(bad("few_shot_fraction", "must lie in (0, 1]"));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(bad("grad_clip", "must be positive"));
            }
        }
        if self.proto_sample == Some(0) {
            return Err(bad("proto_sample", "must be positive"));
        }
        if self.eval_every == Some(0) {
            return Err(bad("eval_every", "must be positive"));
        }
        if self.seasonal_period == Some(0) {
            return Err(bad("seasonal_period", "must be positive"));
        }
        if self.split_mode == SplitMode::Ratio
            && !(self.train_ratio > 0.0 && self.val_ratio > 0.0 && self.train_ratio + self.val_ratio < 1.0)
        {
            return Err(bad("train_ratio", "train_ratio and val_ratio must be positive and sum below 1"));
        }
        self.split_spec()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_patches(), 12);
        assert_eq!(cfg.prompt_len(), 16);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str("d_model = 32\nn_layers = 2\nattention = \"bidirectional\"\n").unwrap();
        assert_eq!(cfg.d_model, 32);
        assert_eq!(cfg.n_layers, 2);
        assert_eq!(cfg.attention, AttentionMask::Bidirectional);
        assert_eq!(cfg.seq_len, 96);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("seq_len = 96\nlearning_rat = 0.1\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "learning_rat"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_is_named() {
        let err = RunConfig::from_toml_str("seq_len = 96\nbatch_size = \"many\"\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "batch_size"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constraint_violations_name_the_key() {
        for (text, key) in [
            ("queue_len = 100\n", "queue_len"),
            ("queue_len = 32\n", "queue_len"),
            ("max_positions = 10\n", "max_positions"),
            ("n_heads = 5\n", "n_heads"),
            ("temperature = 0.0\n", "temperature"),
            ("stride = 32\n", "stride"),
            ("split_mode = \"absolute\"\n", "train_end"),
        ] {
            match RunConfig::from_toml_str(text).unwrap_err() {
                Error::Config { key: k, .. } => assert_eq!(k, key, "{text}"),
                other => panic!("unexpected {other:?}"),
            }
        }
    }
}
