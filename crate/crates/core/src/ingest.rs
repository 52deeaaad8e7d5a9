//! Trace ingestion: parse Intel-Lab-format text traces, drop faulted
//! readings, and align every mote onto a common grid of fixed-width slots.
//!
//! # Trace format
//!
//! One reading per line, eight whitespace-separated fields:
//!
//! ```text
//! date       time            epoch  mote  temperature  humidity  light  voltage
//! 2004-02-28 00:59:16.02785  3      1     19.9884      37.0933   45.08  2.69964
//! ```
//!
//! `date` is `YYYY-MM-DD`, `time` is `HH:MM:SS` with optional fractional
//! seconds, `epoch` and `mote` are non-negative integers (mote ≥ 1), and the
//! four channels are decimal numbers in °C, % RH, lux and volts. A line with
//! any other field count, an unparseable or non-finite number, or an invalid
//! id is skipped and counted, never fatal.
//!
//! Slot assignment is `floor((t − t₀) / Δt)` where `t₀` is the earliest
//! surviving timestamp across all motes. When two readings of a mote fall in
//! one slot, the later timestamp wins.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::ChannelKind;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read trace {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no readings survived cleaning")]
    NoReadings,
    #[error("series has no present slot")]
    AllAbsent,
    #[error("invalid ingest setting: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    WrongFieldCount,
    Unparseable,
    InvalidId,
    Plausibility,
}

impl SkipReason {
    pub const ALL: [SkipReason; 4] =
        [SkipReason::WrongFieldCount, SkipReason::Unparseable, SkipReason::InvalidId, SkipReason::Plausibility];

    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::WrongFieldCount => "wrong_field_count",
            SkipReason::Unparseable => "unparseable",
            SkipReason::InvalidId => "invalid_id",
            SkipReason::Plausibility => "plausibility",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub date: NaiveDate,
    pub time: NaiveTime,
    pub epoch: u64,
    pub mote: u32,
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
    pub voltage: f64,
}

impl SensorReading {
    pub fn timestamp(&self) -> NaiveDateTime {
        self.date.and_time(self.time)
    }

    /// Seconds since the Unix epoch, including the fractional part.
    pub fn seconds(&self) -> f64 {
        let t = self.timestamp().and_utc();
        t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9
    }

    pub fn channel(&self, kind: ChannelKind) -> f64 {
        match kind {
            ChannelKind::Temperature => self.temperature,
            ChannelKind::Humidity => self.humidity,
            ChannelKind::Light => self.light,
            ChannelKind::Voltage => self.voltage,
        }
    }

    /// Total order used to settle slot conflicts deterministically.
    fn conflict_key(&self) -> (NaiveDateTime, u64, [u64; 4]) {
        let bits = [self.temperature, self.humidity, self.light, self.voltage].map(f64::to_bits);
        (self.timestamp(), self.epoch, bits)
    }
}

/// Parse one trace line.
pub fn parse_line(line: &str) -> Result<SensorReading, SkipReason> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [date, time, epoch, mote, temperature, humidity, light, voltage] = fields.as_slice() else {
        return Err(SkipReason::WrongFieldCount);
    };
    let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| SkipReason::Unparseable)?;
    let time = NaiveTime::parse_from_str(time, "%H:%M:%S%.f").map_err(|_| SkipReason::Unparseable)?;
    let int = |s: &str| s.parse::<i64>().map_err(|_| SkipReason::Unparseable);
    let (epoch, mote) = (int(epoch)?, int(mote)?);
    let real = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(SkipReason::Unparseable);
    let (temperature, humidity, light, voltage) = (real(temperature)?, real(humidity)?, real(light)?, real(voltage)?);
    if epoch < 0 || mote < 1 || mote > i64::from(u32::MAX) {
        return Err(SkipReason::InvalidId);
    }
    Ok(SensorReading { date, time, epoch: epoch as u64, mote: mote as u32, temperature, humidity, light, voltage })
}

/// Inclusive plausibility window for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningRules {
    pub temperature: Window,
    pub humidity: Window,
    pub light: Window,
    pub voltage: Window,
    /// Slot width Δt in seconds.
    pub slot_seconds: f64,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            temperature: Window { min: -10.0, max: 60.0 },
            humidity: Window { min: 0.0, max: 100.0 },
            light: Window { min: 0.0, max: 200_000.0 },
            voltage: Window { min: 1.5, max: 3.5 },
            slot_seconds: 60.0,
        }
    }
}

impl CleaningRules {
    pub fn window(&self, kind: ChannelKind) -> Window {
        match kind {
            ChannelKind::Temperature => self.temperature,
            ChannelKind::Humidity => self.humidity,
            ChannelKind::Light => self.light,
            ChannelKind::Voltage => self.voltage,
        }
    }

    pub fn plausible(&self, r: &SensorReading) -> bool {
        ChannelKind::ALL.iter().all(|&k| self.window(k).contains(r.channel(k)))
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.slot_seconds > 0.0 && self.slot_seconds.is_finite()) {
            return Err(IngestError::Config(format!("slot width {} s", self.slot_seconds)));
        }
        for k in ChannelKind::ALL {
            let w = self.window(k);
            if !(w.min <= w.max) {
                return Err(IngestError::Config(format!("{k} window [{}, {}]", w.min, w.max)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_lines: usize,
    pub kept: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
    /// Kept readings that lost a slot to a later reading of the same mote.
    pub slot_conflicts: usize,
}

impl IngestReport {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }

    pub fn skipped_for(&self, reason: SkipReason) -> usize {
        self.skipped.get(&reason).copied().unwrap_or(0)
    }

    /// `reason,count` rows: `kept`, each skip reason, then `slot_conflicts`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("reason,count\n");
        let _ = writeln!(out, "kept,{}", self.kept);
        for reason in SkipReason::ALL {
            let _ = writeln!(out, "{reason},{}", self.skipped_for(reason));
        }
        let _ = writeln!(out, "slot_conflicts,{}", self.slot_conflicts);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub min: f64,
    pub max: f64,
}

/// One mote's readings on the shared slot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MoteSeries {
    pub mote: u32,
    /// Indexed by `ChannelKind::index()`; absent slots hold NaN.
    pub channels: [Vec<f64>; 4],
    pub present: Vec<bool>,
    pub stats: [ChannelStats; 4],
}

impl MoteSeries {
    pub fn channel(&self, kind: ChannelKind) -> &[f64] {
        &self.channels[kind.index()]
    }

    pub fn presence_rate(&self) -> f64 {
        if self.present.is_empty() {
            return 0.0;
        }
        self.present.iter().filter(|p| **p).count() as f64 / self.present.len() as f64
    }
}

/// All motes of a trace, aligned to slots of `slot_seconds` starting at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries {
    pub origin: NaiveDateTime,
    pub slot_seconds: f64,
    pub slots: usize,
    pub motes: BTreeMap<u32, MoteSeries>,
}

impl AlignedSeries {
    /// Slots per calendar day.
    pub fn slots_per_day(&self) -> f64 {
        86_400.0 / self.slot_seconds
    }

    /// Day phase of slot 0, in slots.
    pub fn origin_phase(&self) -> f64 {
        f64::from(self.origin.num_seconds_from_midnight()) / self.slot_seconds
    }

    /// `slot,mote,temperature,humidity,light,voltage,present` with channel
    /// values min-max normalized per mote; absent slots leave values empty.
    pub fn normalized_csv(&self) -> String {
        let mut out = String::from("slot,mote,temperature,humidity,light,voltage,present\n");
        for series in self.motes.values() {
            for slot in 0..self.slots {
                let _ = write!(out, "{slot},{}", series.mote);
                for (values, stats) in series.channels.iter().zip(&series.stats) {
                    if series.present[slot] {
                        let span = stats.max - stats.min;
                        let norm = if span > 0.0 { (values[slot] - stats.min) / span } else { 0.0 };
                        let _ = write!(out, ",{norm}");
                    } else {
                        out.push(',');
                    }
                }
                let _ = writeln!(out, ",{}", u8::from(series.present[slot]));
            }
        }
        out
    }
}

pub fn load_trace(path: &Path, rules: &CleaningRules) -> Result<(AlignedSeries, IngestReport), IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    ingest_text(&text, rules)
}

/// Parse, clean and align a whole trace held in memory.
pub fn ingest_text(text: &str, rules: &CleaningRules) -> Result<(AlignedSeries, IngestReport), IngestError> {
    rules.validate()?;
    let mut report = IngestReport::default();
    let mut readings = Vec::new();
    for line in text.lines() {
        report.total_lines += 1;
        match parse_line(line).and_then(|r| if rules.plausible(&r) { Ok(r) } else { Err(SkipReason::Plausibility) }) {
            Ok(r) => readings.push(r),
            Err(reason) => *report.skipped.entry(reason).or_default() += 1,
        }
    }
    report.kept = readings.len();
    let origin = readings.iter().map(SensorReading::timestamp).min().ok_or(IngestError::NoReadings)?;
    let origin_secs = {
        let t = origin.and_utc();
        t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9
    };
    let slot_of = |r: &SensorReading| ((r.seconds() - origin_secs) / rules.slot_seconds).floor() as usize;
    let slots = readings.iter().map(slot_of).max().map_or(0, |s| s + 1);

    let mut chosen: BTreeMap<u32, BTreeMap<usize, SensorReading>> = BTreeMap::new();
    for r in &readings {
        let slot = slot_of(r);
        let per_mote = chosen.entry(r.mote).or_default();
        match per_mote.get(&slot) {
            Some(existing) => {
                report.slot_conflicts += 1;
                if r.conflict_key() > existing.conflict_key() {
                    per_mote.insert(slot, *r);
                }
            }
            None => {
                per_mote.insert(slot, *r);
            }
        }
    }

    let motes = chosen
        .into_iter()
        .map(|(mote, by_slot)| {
            let mut channels: [Vec<f64>; 4] = std::array::from_fn(|_| vec![f64::NAN; slots]);
            let mut present = vec![false; slots];
            let mut stats = [ChannelStats { min: f64::INFINITY, max: f64::NEG_INFINITY }; 4];
            for (slot, r) in by_slot {
                present[slot] = true;
                for kind in ChannelKind::ALL {
                    let v = r.channel(kind);
                    channels[kind.index()][slot] = v;
                    let s = &mut stats[kind.index()];
                    s.min = s.min.min(v);
                    s.max = s.max.max(v);
                }
            }
            (mote, MoteSeries { mote, channels, present, stats })
        })
        .collect();
    Ok((AlignedSeries { origin, slot_seconds: rules.slot_seconds, slots, motes }, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum GapPolicy {
    /// Repeat the last present value; leading gaps take the first present value.
    Hold,
    /// Hold, and additionally exclude windows whose presence rate is below `min_presence`.
    DropEpisode { min_presence: f64 },
}

impl Default for GapPolicy {
    fn default() -> Self {
        GapPolicy::DropEpisode { min_presence: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilledSeries {
    pub values: Vec<f64>,
    pub present: Vec<bool>,
    /// Start slots of the windows of length `window` that remain eligible.
    pub windows: Vec<usize>,
}

/// Fill gaps in one channel and list the eligible non-overlapping windows.
pub fn gap_fill(values: &[f64], present: &[bool], policy: GapPolicy, window: usize) -> Result<FilledSeries, IngestError> {
    if values.len() != present.len() {
        return Err(IngestError::Config("values and presence flags differ in length".into()));
    }
    if window == 0 {
        return Err(IngestError::Config("window length must be positive".into()));
    }
    let first = present.iter().position(|p| *p).ok_or(IngestError::AllAbsent)?;
    let mut held = values[first];
    let filled = values
        .iter()
        .zip(present)
        .map(|(&v, &p)| {
            if p {
                held = v;
            }
            held
        })
        .collect();
    let min_presence = match policy {
        GapPolicy::Hold => 0.0,
        GapPolicy::DropEpisode { min_presence } => min_presence,
    };
    let windows = (0..present.len() / window)
        .map(|k| k * window)
        .filter(|&start| {
            let hits = present[start..start + window].iter().filter(|p| **p).count();
            hits as f64 / window as f64 >= min_presence
        })
        .collect();
    Ok(FilledSeries { values: filled, present: present.to_vec(), windows })
}
