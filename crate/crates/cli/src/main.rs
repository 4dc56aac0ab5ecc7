use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use nncl_tllm::archive::Archive;
use nncl_tllm::config::RunConfig;
use nncl_tllm::data::{few_shot_subset, load_csv, load_m4, split, window, write_csv, SeriesFrame};
use nncl_tllm::model::{export_embeddings, ExportKind, Model};
use nncl_tllm::trainer::{
    evaluate, evaluate_short_term, fit, synthetic_frame, write_history, SeasonalNaive, SyntheticSpec,
};
use nncl_tllm::Error;

const CHECKPOINT: &str = "checkpoint.nta";
const VERSION: &str = match option_env!("NNCL_TLLM_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

#[derive(Parser)]
#[command(name = "nncl-tllm", version = VERSION, about = "Prototype-prompted transformer forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    NoNncl,
    NoProto,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Selector {
    Prototypes,
    Queue,
    Vocabulary,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a CSV series and write checkpoint, history and manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long = "few-shot")]
        few_shot: Option<f64>,
        #[arg(long, value_enum)]
        ablation: Vec<Ablation>,
    },
    /// Score a checkpoint on the test split, one row per horizon plus Avg.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated horizons, each at most the trained horizon.
        #[arg(long, value_delimiter = ',')]
        horizon: Vec<usize>,
        /// Metrics CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// M4 metadata CSV; switches to SMAPE/MASE/OWA on the series in --data.
        #[arg(long = "m4-info")]
        m4_info: Option<PathBuf>,
    },
    /// Forecast the horizon after one look-back window of every channel.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Exclusive end of the look-back window; defaults to the series end.
        #[arg(long)]
        end: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write prototypes, queue or vocabulary embeddings to a tensor archive.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        what: Selector,
        #[arg(long)]
        out: PathBuf,
        /// Write a zero-row tensor instead of failing on an empty queue.
        #[arg(long)]
        allow_empty: bool,
    },
    /// Write the seeded synthetic benchmark as CSV.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
    },
}

/// An error with its process exit code: 2 for usage or configuration
/// problems, 1 for everything else.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config { .. } | Error::FileNotFound(_)) => 2,
            _ => 1,
        };
        Self { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        error: anyhow!(msg.into()),
    }
}

type CliResult<T> = Result<T, Failure>;

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("NNCL_TLLM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("NNCL_TLLM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::from(Error::FileNotFound(path.to_path_buf())),
        _ => Failure::from(anyhow::Error::new(e).context(format!("reading {}", path.display()))),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_checkpoint(path: &Path) -> CliResult<Model> {
    let path = if path.is_dir() { path.join(CHECKPOINT) } else { path.to_path_buf() };
    let archive = Archive::read(&path)?;
    Ok(Model::from_archive(&archive).with_context(|| format!("loading checkpoint {}", path.display()))?)
}

fn load_frame(model: &Model, data: &Path) -> CliResult<SeriesFrame> {
    let frame = load_csv(data, &model.config.csv_schema())?;
    if frame.n_channels() != model.n_channels {
        return Err(usage(format!(
            "checkpoint was trained on {} channels but {} has {}",
            model.n_channels,
            data.display(),
            frame.n_channels()
        )));
    }
    Ok(frame)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<PathBuf>,
    data: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    horizon: Option<usize>,
    few_shot: Option<f64>,
    ablation: Vec<Ablation>,
) -> CliResult<()> {
    let started = now();
    let mut cfg = match &config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    if few_shot.is_some() {
        cfg.few_shot_fraction = few_shot;
    }
    cfg.disable_nncl |= ablation.contains(&Ablation::NoNncl);
    cfg.disable_neighborhood_tctp |= ablation.contains(&Ablation::NoProto);
    cfg.validate()?;

    let fingerprint = sha256_file(&data)?;
    let frame = load_csv(&data, &cfg.csv_schema())?;
    let splits = split(&frame, &cfg.split_spec()?, cfg.seq_len)?;
    let full_train = window(&splits.train, cfg.seq_len, cfg.horizon)?;
    let val = window(&splits.val, cfg.seq_len, cfg.horizon)?;
    let test = window(&splits.test, cfg.seq_len, cfg.horizon)?;
    let train = match cfg.few_shot_fraction {
        Some(f) => few_shot_subset(&full_train, f)?,
        None => full_train.clone(),
    };

    let m = frame.n_channels();
    let result = fit(&cfg, m, &train, &val)?;
    let report = evaluate(&result.model, &test, m, &[cfg.horizon])?;
    let period = cfg.seasonal_period.unwrap_or_else(|| frame.frequency().seasonal_period());
    let naive = if period <= cfg.seq_len {
        let baseline = SeasonalNaive {
            lookback: cfg.seq_len,
            horizon: cfg.horizon,
            period,
        };
        Some(evaluate(&baseline, &test, m, &[cfg.horizon])?)
    } else {
        None
    };

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    result.model.to_archive()?.write(&out.join(CHECKPOINT))?;
    write_history(&result.history, &out.join("history.csv"))?;
    let (trainable, total) = result.model.parameter_counts();
    let metrics = json!({
        "test_mse": report.avg_mse,
        "test_mae": report.avg_mae,
        "test_windows": report.windows,
        "best_val_mse": result.best_val_mse,
        "steps": result.history.len(),
        "stopped_early": result.stopped_early,
        "final_loss_total": result.history.last().map(|r| r.loss_total),
        "seasonal_naive_mse": naive.as_ref().map(|r| r.avg_mse),
        "seasonal_naive_mae": naive.as_ref().map(|r| r.avg_mae),
        "seasonal_period": period,
        "trainable_parameters": trainable,
        "total_parameters": total,
    });
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics).context("metrics")?)
        .context("writing metrics.json")?;
    let manifest = json!({
        "version": VERSION,
        "seed": cfg.seed,
        "config": cfg,
        "config_toml": cfg.to_toml_string(),
        "config_path": config.as_ref().map(|p| p.display().to_string()),
        "data": {
            "path": data.display().to_string(),
            "sha256": fingerprint,
            "steps": frame.len(),
            "channels": m,
        },
        "few_shot": {
            "fraction": cfg.few_shot_fraction,
            "train_windows": full_train.len(),
            "subset_size": train.len(),
        },
        "metrics": metrics,
        "started_at": started,
        "finished_at": now(),
    });
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest).context("manifest")?)
        .context("writing manifest.json")?;
    println!(
        "trained {} steps; test MSE {:.6} MAE {:.6}; artifacts in {}",
        result.history.len(),
        report.avg_mse,
        report.avg_mae,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(
    checkpoint: PathBuf,
    data: PathBuf,
    horizons: Vec<usize>,
    out: Option<PathBuf>,
    m4_info: Option<PathBuf>,
) -> CliResult<()> {
    let model = load_checkpoint(&checkpoint)?;
    let h_max = model.config.horizon;
    if let Some(info) = m4_info {
        let series = load_m4(&data, &info)?;
        if let Some(s) = series.iter().find(|s| s.horizon > h_max) {
            return Err(usage(format!("series {} needs horizon {} but the checkpoint forecasts {h_max}", s.id, s.horizon)));
        }
        if model.n_channels != 1 {
            return Err(usage("short-term evaluation needs a univariate checkpoint"));
        }
        let r = evaluate_short_term(&model, &series, model.config.mase_scale)?;
        let csv = format!(
            "metric,model,seasonal_naive\nsmape,{},{}\nmase,{},{}\nowa,{},1\n",
            r.smape, r.naive_smape, r.mase, r.naive_mase, r.owa
        );
        print!("{csv}");
        if let Some(p) = out {
            std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?;
        }
        return Ok(());
    }
    let horizons = if horizons.is_empty() { vec![h_max] } else { horizons };
    if let Some(h) = horizons.iter().find(|&&h| h == 0 || h > h_max) {
        return Err(usage(format!("horizon {h} is outside 1..={h_max} for this checkpoint")));
    }
    let frame = load_frame(&model, &data)?;
    let cfg = &model.config;
    let splits = split(&frame, &cfg.split_spec()?, cfg.seq_len)?;
    let test = window(&splits.test, cfg.seq_len, cfg.horizon)?;
    let report = evaluate(&model, &test, model.n_channels, &horizons)?;
    let mut csv = String::from("horizon,mse,mae\n");
    for r in &report.rows {
        writeln!(csv, "{},{},{}", r.horizon, r.mse, r.mae).expect("string write");
    }
    writeln!(csv, "Avg,{},{}", report.avg_mse, report.avg_mae).expect("string write");
    print!("{csv}");
    if let Some(p) = out {
        std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_forecast(checkpoint: PathBuf, data: PathBuf, end: Option<usize>, out: Option<PathBuf>) -> CliResult<()> {
    let model = load_checkpoint(&checkpoint)?;
    let frame = load_frame(&model, &data)?;
    let t = model.config.seq_len;
    let end = end.unwrap_or(frame.len());
    if end < t || end > frame.len() {
        return Err(usage(format!("--end must lie in {t}..={}, got {end}", frame.len())));
    }
    let inputs: Vec<(usize, &[f64])> = (0..frame.n_channels()).map(|c| (c, &frame.channel(c)[end - t..end])).collect();
    let preds = model.predict(&inputs)?;
    let mut csv = String::from("step");
    for name in frame.channel_names() {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for h in 0..model.config.horizon {
        write!(csv, "{}", h + 1).expect("string write");
        for p in &preds {
            write!(csv, ",{}", p[h]).expect("string write");
        }
        csv.push('\n');
    }
    match out {
        Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_export(checkpoint: PathBuf, what: Selector, out: PathBuf, allow_empty: bool) -> CliResult<()> {
    let model = load_checkpoint(&checkpoint)?;
    let kind = match what {
        Selector::Prototypes => ExportKind::Prototypes,
        Selector::Queue => ExportKind::Queue,
        Selector::Vocabulary => ExportKind::Vocabulary,
    };
    let archive = export_embeddings(&model, kind, allow_empty)?;
    archive.write(&out)?;
    let t = &archive.tensors[0];
    println!("wrote {} {:?} to {}", t.name, t.shape, out.display());
    Ok(())
}

fn cmd_make_synthetic(out: PathBuf, seed: Option<u64>, len: Option<usize>, channels: Option<usize>) -> CliResult<()> {
    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        seed: seed.unwrap_or(defaults.seed),
        len: len.unwrap_or(defaults.len),
        channels: channels.unwrap_or(defaults.channels),
        ..defaults
    };
    let frame = synthetic_frame(&spec)?;
    write_csv(&frame, &out, true)?;
    println!("wrote {} steps x {} channels to {}", frame.len(), frame.n_channels(), out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            horizon,
            few_shot,
            ablation,
        } => cmd_train(config, data, out, seed, horizon, few_shot, ablation),
        Command::Evaluate {
            checkpoint,
            data,
            horizon,
            out,
            m4_info,
        } => cmd_evaluate(checkpoint, data, horizon, out, m4_info),
        Command::Forecast { checkpoint, data, end, out } => cmd_forecast(checkpoint, data, end, out),
        Command::ExportEmbeddings {
            checkpoint,
            what,
            out,
            allow_empty,
        } => cmd_export(checkpoint, what, out, allow_empty),
        Command::MakeSynthetic { out, seed, len, channels } => cmd_make_synthetic(out, seed, len, channels),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
