//! Series ingestion, chronological splits, channel-independent windows and
//! few-shot subsets.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Hourly,
    #[serde(rename = "15min")]
    Min15,
    #[serde(rename = "10min")]
    Min10,
    Daily,
    Weekly,
    Monthly,
    Quarterly,
    Yearly,
    Other,
}

impl Frequency {
    /// Seasonal periodicity following the M4 convention.
    pub fn seasonal_period(self) -> usize {
        match self {
            Frequency::Yearly | Frequency::Weekly | Frequency::Daily | Frequency::Other => 1,
            Frequency::Quarterly => 4,
            Frequency::Monthly => 12,
            Frequency::Hourly => 24,
            Frequency::Min15 => 96,
            Frequency::Min10 => 144,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "hourly" | "h" | "1h" => Frequency::Hourly,
            "15min" | "15t" => Frequency::Min15,
            "10min" | "10t" => Frequency::Min10,
            "daily" | "d" => Frequency::Daily,
            "weekly" | "w" => Frequency::Weekly,
            "monthly" | "m" => Frequency::Monthly,
            "quarterly" | "q" => Frequency::Quarterly,
            "yearly" | "y" | "annual" => Frequency::Yearly,
            "other" => Frequency::Other,
            _ => return None,
        })
    }

    fn infer(step_seconds: i64) -> Self {
        const DAY: i64 = 86_400;
        match step_seconds {
            3_600 => Frequency::Hourly,
            900 => Frequency::Min15,
            600 => Frequency::Min10,
            DAY => Frequency::Daily,
            s if s == 7 * DAY => Frequency::Weekly,
            s if (28 * DAY..=31 * DAY).contains(&s) => Frequency::Monthly,
            s if (89 * DAY..=92 * DAY).contains(&s) => Frequency::Quarterly,
            s if (365 * DAY..=366 * DAY).contains(&s) => Frequency::Yearly,
            _ => Frequency::Other,
        }
    }
}

/// A multivariate series stored channel-major (`values[channel][step]`).
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    values: Vec<Vec<f64>>,
    timestamps: Vec<i64>,
    frequency: Frequency,
    channel_names: Vec<String>,
}

impl SeriesFrame {
    pub fn new(
        values: Vec<Vec<f64>>,
        timestamps: Vec<i64>,
        frequency: Frequency,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("series frame has no channels"));
        }
        let len = timestamps.len();
        if len == 0 {
            return Err(Error::Empty("series frame has no steps"));
        }
        if channel_names.len() != values.len() {
            return Err(Error::ShapeMismatch {
                context: "channel names",
                expected: values.len().to_string(),
                actual: channel_names.len().to_string(),
            });
        }
        for ch in &values {
            if ch.len() != len {
                return Err(Error::ShapeMismatch {
                    context: "channel length",
                    expected: len.to_string(),
                    actual: ch.len().to_string(),
                });
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("series values"));
            }
        }
        if let Some(row) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotoneTimestamps { row: row + 2 });
        }
        Ok(Self {
            values,
            timestamps,
            frequency,
            channel_names,
        })
    }

    /// Frame with integer timestamps `0..T` and generated channel names.
    pub fn from_channels(values: Vec<Vec<f64>>) -> Result<Self> {
        let len = values.first().map_or(0, Vec::len);
        let names = (0..values.len()).map(|i| format!("ch{i}")).collect();
        Self::new(values, (0..len as i64).collect(), Frequency::Other, names)
    }

    pub fn n_channels(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// Steps `[start, end)` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {end}) out of range for length {}",
                self.len()
            )));
        }
        Ok(Self {
            values: self.values.iter().map(|c| c[start..end].to_vec()).collect(),
            timestamps: self.timestamps[start..end].to_vec(),
            frequency: self.frequency,
            channel_names: self.channel_names.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Error,
    ForwardFill,
}

/// Column mapping for [`load_csv`].
#[derive(Clone, Debug, Default)]
pub struct CsvSchema {
    /// Value columns to keep, by header name. `None` keeps every column after the first.
    pub value_columns: Option<Vec<String>>,
    pub missing: MissingPolicy,
    /// Overrides frequency inference.
    pub frequency: Option<Frequency>,
}

fn parse_timestamp(cell: &str) -> Option<(i64, bool)> {
    let cell = cell.trim();
    if let Ok(i) = cell.parse::<i64>() {
        return Some((i, false));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(cell) {
        return Some((dt.timestamp(), true));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(cell, fmt) {
            return Some((dt.and_utc().timestamp(), true));
        }
    }
    NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .ok()
        .map(|d| (d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp(), true))
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null" | "NULL")
}

/// Reads a header-first CSV whose first column is an ISO-8601 timestamp or an
/// integer index. Rows are reported 1-based, counting data rows only.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<SeriesFrame> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |e: csv::Error| {
        let row = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse {
            row: row.saturating_sub(1),
            column: 0,
            message: e.to_string(),
        }
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 0,
            column: 0,
            message: "need a timestamp column and at least one value column".into(),
        });
    }
    let columns: Vec<usize> = match &schema.value_columns {
        None => (1..header.len()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                header
                    .iter()
                    .position(|h| h == n)
                    .filter(|&i| i > 0)
                    .ok_or_else(|| Error::Parse {
                        row: 0,
                        column: 0,
                        message: format!("value column `{n}` not found in header"),
                    })
            })
            .collect::<Result<_>>()?,
    };

    let mut values = vec![Vec::new(); columns.len()];
    let mut timestamps = Vec::new();
    let mut saw_datetime = false;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(csv_err)?;
        let ts_cell = record.get(0).unwrap_or("");
        let (ts, is_dt) = parse_timestamp(ts_cell).ok_or_else(|| Error::Parse {
            row,
            column: 1,
            message: format!("cannot parse timestamp `{ts_cell}`"),
        })?;
        saw_datetime |= is_dt;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(Error::NonMonotoneTimestamps { row });
            }
        }
        timestamps.push(ts);
        for (slot, &col) in columns.iter().enumerate() {
            let cell = record.get(col).unwrap_or("");
            let v = if is_missing(cell) {
                match (schema.missing, values[slot].last()) {
                    (MissingPolicy::ForwardFill, Some(&prev)) => prev,
                    _ => {
                        return Err(Error::Parse {
                            row,
                            column: col + 1,
                            message: "missing value".into(),
                        })
                    }
                }
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: col + 1,
                    message: format!("non-numeric value `{cell}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: col + 1,
                        message: "non-finite value".into(),
                    });
                }
                v
            };
            values[slot].push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Empty("csv has no data rows"));
    }
    let frequency = schema.frequency.unwrap_or_else(|| {
        if saw_datetime && timestamps.len() > 1 {
            let mut deltas: Vec<i64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
            deltas.sort_unstable();
            Frequency::infer(deltas[deltas.len() / 2])
        } else {
            Frequency::Other
        }
    });
    let names = columns.iter().map(|&c| header[c].clone()).collect();
    SeriesFrame::new(values, timestamps, frequency, names)
}

/// Writes a frame in the same layout [`load_csv`] reads (integer index column
/// when `iso` is false, `YYYY-MM-DD HH:MM:SS` otherwise).
pub fn write_csv(frame: &SeriesFrame, path: &Path, iso: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header = vec!["date".to_string()];
    header.extend(frame.channel_names().iter().cloned());
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for t in 0..frame.len() {
        let ts = frame.timestamps()[t];
        let mut row = vec![if iso {
            DateTime::from_timestamp(ts, 0)
                .map(|d| d.naive_utc().format("%Y-%m-%d %H:%M:%S").to_string())
                .unwrap_or_else(|| ts.to_string())
        } else {
            ts.to_string()
        }];
        row.extend((0..frame.n_channels()).map(|c| frame.channel(c)[t].to_string()));
        w.write_record(&row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// One univariate supervised example.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub channel_index: usize,
    pub window_start: usize,
}

/// Chronological split borders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Explicit step borders. `test_end` defaults to the frame length.
    Absolute {
        train_end: usize,
        val_end: usize,
        #[serde(default)]
        test_end: Option<usize>,
    },
    /// Fractions of the frame length for train and validation.
    Ratio { train: f64, val: f64 },
}

impl SplitSpec {
    /// 12/4/4 months of hourly data.
    pub fn ett_hourly() -> Self {
        let month = 30 * 24;
        SplitSpec::Absolute {
            train_end: 12 * month,
            val_end: 16 * month,
            test_end: Some(20 * month),
        }
    }

    /// 12/4/4 months of 15-minute data.
    pub fn ett_minute() -> Self {
        let month = 30 * 24 * 4;
        SplitSpec::Absolute {
            train_end: 12 * month,
            val_end: 16 * month,
            test_end: Some(20 * month),
        }
    }

    /// Resolves to `(train_end, val_end, test_end)` for a frame of `total` steps.
    pub fn borders(&self, total: usize) -> Result<(usize, usize, usize)> {
        let (train_end, val_end, test_end) = match *self {
            SplitSpec::Absolute {
                train_end,
                val_end,
                test_end,
            } => (train_end, val_end, test_end.unwrap_or(total)),
            SplitSpec::Ratio { train, val } => {
                if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "split ratios must be positive and sum below 1 (train {train}, val {val})"
                    )));
                }
                let t = (total as f64 * train).floor() as usize;
                let v = (total as f64 * (train + val)).floor() as usize;
                (t, v, total)
            }
        };
        if !(0 < train_end && train_end < val_end && val_end < test_end && test_end <= total) {
            return Err(Error::InvalidArgument(format!(
                "split borders must satisfy 0 < train_end < val_end < test_end <= {total}, got ({train_end}, {val_end}, {test_end})"
            )));
        }
        Ok((train_end, val_end, test_end))
    }
}

/// Train/validation/test frames.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: SeriesFrame,
    pub val: SeriesFrame,
    pub test: SeriesFrame,
}

/// Chronological split; validation and test are extended `lookback` steps
/// backward so their first window reads history from the preceding partition.
pub fn split(frame: &SeriesFrame, spec: &SplitSpec, lookback: usize) -> Result<Splits> {
    let (train_end, val_end, test_end) = spec.borders(frame.len())?;
    if train_end < lookback + 1 {
        return Err(Error::TooShort(format!(
            "train partition has {train_end} steps, need at least {}",
            lookback + 1
        )));
    }
    for (name, len) in [("validation", val_end - train_end), ("test", test_end - val_end)] {
        if len < 1 {
            return Err(Error::TooShort(format!("{name} partition is empty")));
        }
    }
    Ok(Splits {
        train: frame.slice(0, train_end)?,
        val: frame.slice(train_end - lookback, val_end)?,
        test: frame.slice(val_end - lookback, test_end)?,
    })
}

/// Windows per channel for a partition of `len` steps.
pub fn window_count(len: usize, lookback: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(lookback + horizon)
}

/// Every `(channel, start)` window at stride 1, channel-major.
pub fn window(frame: &SeriesFrame, lookback: usize, horizon: usize) -> Result<Vec<WindowSample>> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::InvalidArgument(
            "look-back and horizon must be positive".into(),
        ));
    }
    if frame.len() < lookback + horizon {
        return Err(Error::TooShort(format!(
            "frame has {} steps, need at least {} for one window",
            frame.len(),
            lookback + horizon
        )));
    }
    let per_channel = window_count(frame.len(), lookback, horizon);
    let mut out = Vec::with_capacity(per_channel * frame.n_channels());
    for c in 0..frame.n_channels() {
        let series = frame.channel(c);
        for start in 0..per_channel {
            out.push(WindowSample {
                input: series[start..start + lookback].to_vec(),
                target: series[start + lookback..start + lookback + horizon].to_vec(),
                channel_index: c,
                window_start: start,
            });
        }
    }
    Ok(out)
}

/// Number of windows kept out of `count` for a few-shot `fraction`.
pub fn few_shot_count(count: usize, fraction: f64) -> usize {
    // Guard the ceiling against representation error such as 0.1 * 30.
    let raw = fraction * count as f64;
    let rounded = raw.round();
    let kept = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (kept as usize).min(count)
}

/// Keeps the chronologically first `ceil(fraction * count)` windows of each channel.
pub fn few_shot_subset(samples: &[WindowSample], fraction: f64) -> Result<Vec<WindowSample>> {
    if samples.is_empty() {
        return Err(Error::Empty("few-shot input"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "few-shot fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut starts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for s in samples {
        starts.entry(s.channel_index).or_default().push(s.window_start);
    }
    let cutoff: HashMap<usize, usize> = starts
        .into_iter()
        .map(|(c, mut v)| {
            v.sort_unstable();
            let keep = few_shot_count(v.len(), fraction);
            (c, v[keep - 1])
        })
        .collect();
    Ok(samples
        .iter()
        .filter(|s| s.window_start <= cutoff[&s.channel_index])
        .cloned()
        .collect())
}

/// Regroups per-channel forecasts `(channel, window_start, forecast)` into one
/// `M × H` matrix per window start.
pub fn reassemble(
    forecasts: &[(usize, usize, Vec<f64>)],
    n_channels: usize,
) -> Result<BTreeMap<usize, Vec<Vec<f64>>>> {
    let mut out: BTreeMap<usize, Vec<Option<Vec<f64>>>> = BTreeMap::new();
    for (channel, start, f) in forecasts {
        if *channel >= n_channels {
            return Err(Error::InvalidArgument(format!(
                "channel {channel} out of range for {n_channels} channels"
            )));
        }
        let slot = &mut out.entry(*start).or_insert_with(|| vec![None; n_channels])[*channel];
        if slot.is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate forecast for channel {channel} at start {start}"
            )));
        }
        *slot = Some(f.clone());
    }
    out.into_iter()
        .map(|(start, rows)| {
            let rows = rows
                .into_iter()
                .enumerate()
                .map(|(c, r)| {
                    r.ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "missing channel {c} forecast at start {start}"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((start, rows))
        })
        .collect()
}

/// One univariate series in M4 layout.
#[derive(Clone, Debug, PartialEq)]
pub struct M4Series {
    pub id: String,
    pub frequency: Frequency,
    pub horizon: usize,
    pub values: Vec<f64>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Reads M4-style data: `values` has one `id,v1,v2,...` series per line
/// (trailing empty cells ignored, an optional non-numeric header skipped);
/// `metadata` is a headed CSV with id, frequency and horizon columns.
pub fn load_m4(values: &Path, metadata: &Path) -> Result<Vec<M4Series>> {
    let mut meta_reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(metadata)?);
    let header: Vec<String> = meta_reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let find = |names: &[&str]| {
        header
            .iter()
            .position(|h| names.contains(&h.as_str()))
            .ok_or_else(|| Error::Parse {
                row: 0,
                column: 0,
                message: format!("metadata needs one of the columns {names:?}"),
            })
    };
    let id_col = find(&["id", "m4id", "series_id"])?;
    let freq_col = find(&["frequency", "sp", "freq"])?;
    let horizon_col = find(&["horizon"])?;
    let mut meta = HashMap::new();
    for (i, rec) in meta_reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let cell = |c: usize| rec.get(c).unwrap_or("").to_string();
        let freq = Frequency::parse(&cell(freq_col)).ok_or_else(|| Error::Parse {
            row,
            column: freq_col + 1,
            message: format!("unknown frequency `{}`", cell(freq_col)),
        })?;
        let horizon: usize = cell(horizon_col).parse().map_err(|_| Error::Parse {
            row,
            column: horizon_col + 1,
            message: "horizon must be a positive integer".into(),
        })?;
        meta.insert(cell(id_col), (freq, horizon));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(values)?);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let cells: Vec<&str> = rec.iter().collect();
        let Some((&id, rest)) = cells.split_first() else {
            continue;
        };
        let rest: Vec<&str> = {
            let end = rest.iter().rposition(|c| !c.is_empty()).map_or(0, |p| p + 1);
            rest[..end].to_vec()
        };
        if row == 1 && rest.first().is_some_and(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let values = rest
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row,
                        column: j + 2,
                        message: format!("non-numeric value `{c}`"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let &(frequency, horizon) = meta.get(id).ok_or_else(|| Error::Parse {
            row,
            column: 1,
            message: format!("series `{id}` missing from metadata"),
        })?;
        out.push(M4Series {
            id: id.to_string(),
            frequency,
            horizon,
            values,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("m4 values file"));
    }
    Ok(out)
}
