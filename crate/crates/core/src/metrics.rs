//! Acquisition metrics computed from an episode log: reconstruction quality,
//! energy, redundancy and critical-event detection.
//!
//! Every metric is a per-sensor quantity averaged with equal weight across
//! sensors. Reconstruction is a zero-order hold of the kept samples; epochs
//! before the first kept sample are held at the midpoint of the sensor's
//! ground-truth range, the same prior the environment uses for its reward.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DETECTION_WINDOW: usize = 2;
pub const DEFAULT_EVENT_STD_WINDOW: usize = 20;
pub const DEFAULT_EVENT_STD_FACTOR: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty set of reports")]
    Empty,
    #[error("mixed policy labels in aggregate: '{0}' and '{1}'")]
    MixedLabels(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeptSample {
    pub epoch: usize,
    pub value: f64,
}

/// What one sensor did during an episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorLog {
    /// Ground-truth signal, one value per epoch.
    pub truth: Vec<f64>,
    /// Samples that reached the sink, epochs strictly increasing.
    pub kept: Vec<KeptSample>,
    /// Energy drawn per epoch (mJ).
    pub ledger: Vec<f64>,
    /// Ground-truth critical-event epochs.
    pub events: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub sensors: Vec<SensorLog>,
}

impl SensorLog {
    /// Ground-truth span, with a degenerate (zero) span replaced by 1.
    pub fn range(&self) -> f64 {
        value_range(&self.truth)
    }

    pub fn midpoint(&self) -> f64 {
        let (lo, hi) = min_max(&self.truth);
        if lo.is_finite() { 0.5 * (lo + hi) } else { 0.0 }
    }

    /// Zero-order-hold reconstruction over the whole episode.
    pub fn reconstruction(&self) -> Vec<f64> {
        let mut held = self.midpoint();
        let mut next = self.kept.iter().peekable();
        (0..self.truth.len())
            .map(|t| {
                while let Some(s) = next.next_if(|s| s.epoch <= t) {
                    held = s.value;
                }
                held
            })
            .collect()
    }
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub(crate) fn value_range(values: &[f64]) -> f64 {
    let (lo, hi) = min_max(values);
    let span = hi - lo;
    if span > 0.0 && span.is_finite() { span } else { 1.0 }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { 0.0 } else { sum / n as f64 }
}

/// Per-sensor `max(0, 1 − RMSE/range)` of the zero-order-hold reconstruction;
/// a sensor with no kept sample scores 0.
pub fn sensor_quality(sensor: &SensorLog) -> f64 {
    if sensor.kept.is_empty() || sensor.truth.is_empty() {
        return 0.0;
    }
    let recon = sensor.reconstruction();
    let mse = mean(sensor.truth.iter().zip(&recon).map(|(t, r)| (t - r) * (t - r)));
    (1.0 - mse.sqrt() / sensor.range()).max(0.0)
}

pub fn data_quality(log: &EpisodeLog) -> f64 {
    mean(log.sensors.iter().map(sensor_quality))
}

/// Energy drawn per sensor over the episode (mJ), averaged across sensors.
pub fn energy_total(log: &EpisodeLog) -> f64 {
    mean(log.sensors.iter().map(|s| s.ledger.iter().sum::<f64>()))
}

/// Percentage of kept samples within `threshold · range` of the previous kept sample.
pub fn sensor_redundancy(sensor: &SensorLog, threshold: f64) -> f64 {
    if sensor.kept.len() <= 1 {
        return 0.0;
    }
    let limit = threshold * sensor.range();
    let dup = sensor.kept.windows(2).filter(|w| (w[1].value - w[0].value).abs() < limit).count();
    100.0 * dup as f64 / sensor.kept.len() as f64
}

pub fn redundancy_rate(log: &EpisodeLog, threshold: f64) -> f64 {
    mean(log.sensors.iter().map(|s| sensor_redundancy(s, threshold)))
}

/// Percentage of events followed by a kept sample within `[event, event + window]`.
pub fn sensor_detection(sensor: &SensorLog, window: usize) -> f64 {
    if sensor.events.is_empty() {
        return 100.0;
    }
    let hit = sensor
        .events
        .iter()
        .filter(|&&e| {
            let first = sensor.kept.partition_point(|s| s.epoch < e);
            sensor.kept.get(first).is_some_and(|s| s.epoch <= e + window)
        })
        .count();
    100.0 * hit as f64 / sensor.events.len() as f64
}

pub fn event_detection_rate(log: &EpisodeLog, window: usize) -> f64 {
    mean(log.sensors.iter().map(|s| sensor_detection(s, window)))
}

/// Events in a recorded series: epochs whose step `|x[t] − x[t−1]|` exceeds
/// `factor` times the standard deviation of the previous `window` steps.
pub fn detect_events(series: &[f64], window: usize, factor: f64) -> Vec<usize> {
    let steps: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    (window..steps.len())
        .filter(|&i| {
            let past = &steps[i - window..i];
            let m = mean(past.iter().copied());
            let var = mean(past.iter().map(|d| (d - m) * (d - m)));
            steps[i].abs() > factor * var.sqrt()
        })
        .map(|i| i + 1)
        .collect()
}

/// The four acquisition metrics for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub data_quality: f64,
    pub energy_mj: f64,
    pub redundancy_pct: f64,
    pub detection_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSettings {
    pub redundancy_threshold: f64,
    pub detection_window: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self { redundancy_threshold: 0.05, detection_window: DEFAULT_DETECTION_WINDOW }
    }
}

impl MetricsRow {
    pub fn from_log(log: &EpisodeLog, settings: MetricSettings) -> Self {
        Self {
            data_quality: data_quality(log),
            energy_mj: energy_total(log),
            redundancy_pct: redundancy_rate(log, settings.redundancy_threshold),
            detection_pct: event_detection_rate(log, settings.detection_window),
        }
    }

    /// Column-wise mean of several rows.
    pub fn mean_of(rows: &[MetricsRow]) -> Self {
        Self {
            data_quality: mean(rows.iter().map(|r| r.data_quality)),
            energy_mj: mean(rows.iter().map(|r| r.energy_mj)),
            redundancy_pct: mean(rows.iter().map(|r| r.redundancy_pct)),
            detection_pct: mean(rows.iter().map(|r| r.detection_pct)),
        }
    }

    fn columns(&self) -> [f64; 4] {
        [self.data_quality, self.energy_mj, self.redundancy_pct, self.detection_pct]
    }

    fn from_columns(c: [f64; 4]) -> Self {
        Self { data_quality: c[0], energy_mj: c[1], redundancy_pct: c[2], detection_pct: c[3] }
    }
}

/// Metrics for one policy, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub seeds: Vec<u64>,
    pub mean: MetricsRow,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: MetricsRow,
}

impl MetricsReport {
    pub fn single(policy: impl Into<String>, seed: u64, row: MetricsRow) -> Self {
        Self { policy: policy.into(), seeds: vec![seed], mean: row, std: MetricsRow::default() }
    }
}

/// Mean and sample standard deviation of each metric across per-seed reports.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    if let Some(other) = reports.iter().find(|r| r.policy != first.policy) {
        return Err(MetricsError::MixedLabels(first.policy.clone(), other.policy.clone()));
    }
    let mut seeds: Vec<u64> = reports.iter().flat_map(|r| r.seeds.iter().copied()).collect();
    seeds.sort_unstable();
    // Sorted summation keeps the aggregate independent of report order.
    let columns: Vec<[f64; 4]> = reports.iter().map(|r| r.mean.columns()).collect();
    let n = columns.len() as f64;
    let mut means = [0.0; 4];
    let mut stds = [0.0; 4];
    for c in 0..4 {
        let mut values: Vec<f64> = columns.iter().map(|row| row[c]).collect();
        values.sort_by(f64::total_cmp);
        let m = values.iter().sum::<f64>() / n;
        means[c] = m;
        if values.len() > 1 {
            let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
            stds[c] = (ss / (n - 1.0)).sqrt();
        }
    }
    Ok(MetricsReport {
        policy: first.policy.clone(),
        seeds,
        mean: MetricsRow::from_columns(means),
        std: MetricsRow::from_columns(stds),
    })
}

pub const REPORT_HEADER: &str = "policy,data_quality,energy_mj,redundancy_pct,detection_pct,seeds,data_quality_std,energy_mj_std,redundancy_pct_std,detection_pct_std";

/// One CSV row in [`REPORT_HEADER`] order; seeds are `;`-joined.
pub fn report_csv_row(report: &MetricsReport) -> String {
    let seeds: Vec<String> = report.seeds.iter().map(ToString::to_string).collect();
    let mut row = String::new();
    let m = report.mean;
    let s = report.std;
    let _ = write!(
        row,
        "{},{},{},{},{},{},{},{},{},{}",
        report.policy,
        m.data_quality,
        m.energy_mj,
        m.redundancy_pct,
        m.detection_pct,
        seeds.join(";"),
        s.data_quality,
        s.energy_mj,
        s.redundancy_pct,
        s.detection_pct
    );
    row
}
