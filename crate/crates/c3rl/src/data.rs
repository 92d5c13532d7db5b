//! CSV ingestion, chronological splitting, standardization, sliding-window
//! sampling, and evaluation metrics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parsed multivariate series: `values[t][c]`, timestamps strictly increasing.
#[derive(Debug)]
pub struct RawSeries {
    pub timestamps: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub channel_names: Vec<String>,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }
}

/// Timestamp ordering key: parse common datetime layouts, otherwise fall
/// back to the raw string (still required to be strictly increasing).
fn timestamp_key(s: &str) -> String {
    // "2016-07-01 00:00:00" style strings already sort lexicographically;
    // normalize short forms like "2016-7-1 0:00" by zero padding.
    let mut parts = s.split(|c: char| !c.is_ascii_digit()).filter(|p| !p.is_empty());
    let mut key = String::new();
    let widths = [4usize, 2, 2, 2, 2, 2];
    for w in widths {
        match parts.next() {
            Some(p) => {
                for _ in p.len()..w {
                    key.push('0');
                }
                key.push_str(p);
            }
            None => key.push_str(&"0".repeat(w)),
        }
    }
    key
}

/// First column must be a timestamp header named "date"; remaining columns
/// numeric. Channel count is columns - 1.
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!(
        "cannot open {}: {e}",
        path.display()
    )))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("date") {
        return Err(Error::Data(format!(
            "{}: first column must be named 'date', got {:?}",
            path.display(),
            headers.get(0)
        )));
    }
    let channel_names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    if channel_names.is_empty() {
        return Err(Error::Data(format!("{}: no value columns", path.display())));
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut last_key: Option<String> = None;
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 2; // 1-based, after header
        let record = record.map_err(|e| Error::Data(format!("{}: row {row}: {e}", path.display())))?;
        let ts = record
            .get(0)
            .ok_or_else(|| Error::Data(format!("{}: row {row}: missing timestamp", path.display())))?
            .to_string();
        let key = timestamp_key(&ts);
        if let Some(prev) = &last_key {
            if key <= *prev {
                return Err(Error::Data(format!(
                    "{}: row {row}: non-monotonic timestamp '{ts}'",
                    path.display()
                )));
            }
        }
        last_key = Some(key);
        let mut row_vals = Vec::with_capacity(channel_names.len());
        for (c, name) in channel_names.iter().enumerate() {
            let cell = record.get(c + 1).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {row}, column '{name}': cannot parse '{cell}' as a number",
                    path.display()
                ))
            })?;
            row_vals.push(v);
        }
        timestamps.push(ts);
        values.push(row_vals);
    }
    Ok(RawSeries { timestamps, values, channel_names })
}

/// Chronological split protocol.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum SplitSpec {
    /// 12/4/4 months of 30 days, hourly: 8640 / 2880 / 2880 points.
    EttHour,
    /// Same months at 15-minute sampling: 34560 / 11520 / 11520 points.
    EttMinute,
    /// Floor proportions in chronological order.
    Ratio(f64, f64, f64),
}

/// Half-open index ranges for train/val/test. Val and test look back `L`
/// points into the preceding segment (the standard lookback overhang).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitBorders {
    pub train: (usize, usize),
    pub val: (usize, usize),
    pub test: (usize, usize),
}

pub fn split(total: usize, spec: SplitSpec, lookback: usize, horizon: usize) -> Result<SplitBorders> {
    let (n_train, n_val, n_test) = match spec {
        SplitSpec::EttHour => (8640, 2880, 2880),
        SplitSpec::EttMinute => (34560, 11520, 11520),
        SplitSpec::Ratio(a, b, c) => {
            if !(a > 0.0 && b > 0.0 && c > 0.0 && a + b + c <= 1.0 + 1e-9) {
                return Err(Error::Config(format!("invalid split ratio ({a}, {b}, {c})")));
            }
            let n_train = (total as f64 * a).floor() as usize;
            let n_val = (total as f64 * b).floor() as usize;
            let n_test = (total as f64 * c).floor() as usize;
            (n_train, n_val, n_test)
        }
    };
    if n_train + n_val + n_test > total {
        return Err(Error::Data(format!(
            "series of {total} points is too short for the requested split ({n_train}+{n_val}+{n_test})"
        )));
    }
    let min_len = lookback + horizon;
    for (name, n) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if n < min_len {
            return Err(Error::Data(format!(
                "{name} segment of {n} points cannot hold one window of lookback {lookback} + horizon {horizon}"
            )));
        }
    }
    Ok(SplitBorders {
        train: (0, n_train),
        val: (n_train - lookback, n_train + n_val),
        test: (n_train + n_val - lookback, n_train + n_val + n_test),
    })
}

/// Per-channel standardization statistics fitted on the train segment only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const SCALER_EPS: f64 = 1e-8;

pub fn fit_scaler(train_values: &[Vec<f64>]) -> Scaler {
    let channels = train_values.first().map_or(0, |r| r.len());
    let n = train_values.len() as f64;
    let mut mean = vec![0.0; channels];
    for row in train_values {
        for (c, v) in row.iter().enumerate() {
            mean[c] += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = vec![0.0; channels];
    for row in train_values {
        for (c, v) in row.iter().enumerate() {
            let d = v - mean[c];
            std[c] += d * d;
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt().max(SCALER_EPS);
    }
    Scaler { mean, std }
}

pub fn apply_scaler(values: &[Vec<f64>], scaler: &Scaler) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - scaler.mean[c]) / scaler.std[c])
                .collect()
        })
        .collect()
}

pub fn invert_scaler(values: &[Vec<f64>], scaler: &Scaler) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, v)| v * scaler.std[c] + scaler.mean[c])
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Train,
    Val,
    Test,
}

/// Standardized values plus window accounting over one chronological split.
pub struct WindowedDataset {
    pub values: Vec<Vec<f64>>, // standardized, full series
    pub borders: SplitBorders,
    pub scaler: Scaler,
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowedDataset {
    pub fn new(series: &RawSeries, spec: SplitSpec, lookback: usize, horizon: usize) -> Result<Self> {
        let borders = split(series.len(), spec, lookback, horizon)?;
        let scaler = fit_scaler(&series.values[borders.train.0..borders.train.1]);
        let values = apply_scaler(&series.values, &scaler);
        Ok(WindowedDataset { values, borders, scaler, lookback, horizon })
    }

    pub fn channels(&self) -> usize {
        self.values.first().map_or(0, |r| r.len())
    }

    fn segment_range(&self, segment: Segment) -> (usize, usize) {
        match segment {
            Segment::Train => self.borders.train,
            Segment::Val => self.borders.val,
            Segment::Test => self.borders.test,
        }
    }

    /// Number of (lookback, horizon) windows in a segment:
    /// segment_length - L - P + 1.
    pub fn window_count(&self, segment: Segment) -> usize {
        let (start, end) = self.segment_range(segment);
        (end - start).saturating_sub(self.lookback + self.horizon - 1)
    }

    /// Window `w` of a segment: x = steps [t, t+L), y = steps [t+L, t+L+P).
    pub fn window(&self, segment: Segment, w: usize) -> (Vec<f64>, Vec<f64>) {
        let (start, _) = self.segment_range(segment);
        let t = start + w;
        let n = self.channels();
        let mut x = Vec::with_capacity(self.lookback * n);
        for row in &self.values[t..t + self.lookback] {
            x.extend_from_slice(row);
        }
        let mut y = Vec::with_capacity(self.horizon * n);
        for row in &self.values[t + self.lookback..t + self.lookback + self.horizon] {
            y.extend_from_slice(row);
        }
        (x, y)
    }

    /// Batches of (x: [B, L, N], y: [B, P, N]). Train order shuffled by the
    /// provided generator; val/test in chronological order. The last partial
    /// batch is kept.
    pub fn batches(
        &self,
        segment: Segment,
        batch_size: usize,
        shuffle: Option<&mut impl Rng>,
    ) -> Result<Vec<(Tensor, Tensor)>> {
        let count = self.window_count(segment);
        if count == 0 {
            return Err(Error::Data(format!(
                "segment {segment:?} holds no complete (lookback, horizon) window"
            )));
        }
        let mut order: Vec<usize> = (0..count).collect();
        if let Some(rng) = shuffle {
            order.shuffle(rng);
        }
        let n = self.channels();
        let mut out = Vec::new();
        for chunk in order.chunks(batch_size) {
            let b = chunk.len();
            let mut xs = Vec::with_capacity(b * self.lookback * n);
            let mut ys = Vec::with_capacity(b * self.horizon * n);
            for &w in chunk {
                let (x, y) = self.window(segment, w);
                xs.extend(x);
                ys.extend(y);
            }
            out.push((
                Tensor::new(xs, vec![b, self.lookback, n]),
                Tensor::new(ys, vec![b, self.horizon, n]),
            ));
        }
        Ok(out)
    }
}

/// Mean squared error over all elements.
pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mse: length mismatch {} vs {}", pred.len(), truth.len());
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Mean absolute error over all elements.
pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mae: length mismatch {} vs {}", pred.len(), truth.len());
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}
