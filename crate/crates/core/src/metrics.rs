//! Metrics CSV files and per-epoch aggregation across seeds.

use std::path::{Path, PathBuf};

use crate::error::{EsilError, Result};
use crate::trainer::EpochMetrics;

pub const METRICS_HEADER: [&str; 7] = [
    "epoch",
    "success_rate",
    "beta",
    "policy_loss",
    "value_loss",
    "esil_loss",
    "seconds",
];

pub const CURVES_HEADER: [&str; 8] = [
    "epoch",
    "success_median",
    "success_p25",
    "success_p75",
    "beta_median",
    "beta_p25",
    "beta_p75",
    "runs",
];

/// One parsed metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub success_rate: f64,
    pub beta: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub esil_loss: f64,
    pub seconds: Option<f64>,
}

impl From<&EpochMetrics> for MetricsRow {
    fn from(m: &EpochMetrics) -> Self {
        Self {
            epoch: m.epoch,
            success_rate: m.success_rate,
            beta: m.beta,
            policy_loss: m.policy_loss,
            value_loss: m.value_loss,
            esil_loss: m.esil_loss,
            seconds: m.seconds,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> EsilError {
    EsilError::Metrics(format!("{}: {e}", path.display()))
}

/// Appends rows to a metrics file, writing the header first.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        inner.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(|e| EsilError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        let record = [
            row.epoch.to_string(),
            row.success_rate.to_string(),
            row.beta.to_string(),
            row.policy_loss.to_string(),
            row.value_loss.to_string(),
            row.esil_loss.to_string(),
            row.seconds.map_or(String::new(), |s| format!("{s:.3}")),
        ];
        self.inner.write_record(&record).map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush().map_err(|e| EsilError::io(&self.path, e))
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    rows.iter().try_for_each(|r| w.write(r))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(EsilError::Metrics(format!(
            "{}: unexpected header `{}`",
            path.display(),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let bad = |col: &str| EsilError::Metrics(format!("{}: row {}: bad `{col}`", path.display(), i + 1));
            let num = |j: usize| rec[j].parse::<f64>().map_err(|_| bad(METRICS_HEADER[j]));
            Ok(MetricsRow {
                epoch: rec[0].parse().map_err(|_| bad("epoch"))?,
                success_rate: num(1)?,
                beta: num(2)?,
                policy_loss: num(3)?,
                value_loss: num(4)?,
                esil_loss: num(5)?,
                seconds: if rec[6].is_empty() { None } else { Some(num(6)?) },
            })
        })
        .collect()
}

/// Percentile `q` in `[0, 1]` with linear interpolation between order
/// statistics. `values` need not be sorted.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub success: [f64; 3],
    pub beta: [f64; 3],
    pub runs: usize,
}

fn band(values: &[f64]) -> [f64; 3] {
    [percentile(values, 0.5), percentile(values, 0.25), percentile(values, 0.75)]
}

/// Per-epoch median and quartiles of success rate and beta across runs.
/// Every run must have the same number of epochs.
pub fn aggregate(runs: &[(String, Vec<MetricsRow>)]) -> Result<Vec<CurvePoint>> {
    let Some((_, first)) = runs.first() else {
        return Err(EsilError::Metrics("no runs to aggregate".into()));
    };
    let expected = first.len();
    let offenders: Vec<String> = runs
        .iter()
        .filter(|(_, rows)| rows.len() != expected)
        .map(|(name, rows)| format!("{name} ({} epochs)", rows.len()))
        .collect();
    if !offenders.is_empty() {
        return Err(EsilError::Metrics(format!(
            "mismatched epoch counts (expected {expected} from {}): {}",
            runs[0].0,
            offenders.join(", ")
        )));
    }
    Ok((0..expected)
        .map(|e| {
            let success: Vec<f64> = runs.iter().map(|(_, r)| r[e].success_rate).collect();
            let beta: Vec<f64> = runs.iter().map(|(_, r)| r[e].beta).collect();
            CurvePoint {
                epoch: first[e].epoch,
                success: band(&success),
                beta: band(&beta),
                runs: runs.len(),
            }
        })
        .collect())
}

pub fn write_curves<W: std::io::Write>(out: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| EsilError::Metrics(e.to_string());
    w.write_record(CURVES_HEADER).map_err(err)?;
    for p in points {
        let mut record = vec![p.epoch.to_string()];
        record.extend(p.success.iter().chain(&p.beta).map(f64::to_string));
        record.push(p.runs.to_string());
        w.write_record(&record).map_err(err)?;
    }
    w.flush().map_err(|e| EsilError::Metrics(e.to_string()))
}
