//! Environment configuration and its TOML schema.
//!
//! ```toml
//! sensors = ["temperature", "humidity", "light", "voltage"]
//! epochs = 200
//! epochs_per_day = 24.0
//! action_mode = "binary"          # or "interval"
//! initial_battery = 300.0         # mJ
//! idle_cost = 0.05                # mJ per non-sampling epoch
//! redundancy_threshold = 0.05     # fraction of channel range
//! noise_scale = 0.2               # interference noise, fraction of range at η = 1
//! drop_probability = 0.1          # sample-loss probability at η = 1
//! interference = 0.0              # η in [0, 1]
//!
//! [sample_cost]                   # mJ per sample
//! temperature = 1.0
//! humidity = 1.2
//! light = 0.8
//! voltage = 0.6
//!
//! [weights]                       # reward λ1, λ2, λ3
//! info = 0.5
//! energy = 0.2
//! redundancy = 0.3
//!
//! [source]
//! kind = "synthetic"              # or "replay" with the fields of `ReplayConfig`
//!
//! [synthetic.temperature]         # optional per-kind signal overrides
//! walk_std = 0.05
//! ```

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::ingest::{CleaningRules, GapPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Temperature,
    Humidity,
    Light,
    Voltage,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] =
        [ChannelKind::Temperature, ChannelKind::Humidity, ChannelKind::Light, ChannelKind::Voltage];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Temperature => "temperature",
            ChannelKind::Humidity => "humidity",
            ChannelKind::Light => "light",
            ChannelKind::Voltage => "voltage",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reward weights `(λ1, λ2, λ3)` on information gain, energy cost and duplication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub info: f64,
    pub energy: f64,
    pub redundancy: f64,
}

impl RewardWeights {
    pub const fn new(info: f64, energy: f64, redundancy: f64) -> Self {
        Self { info, energy, redundancy }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let all = [self.info, self.energy, self.redundancy];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(EnvError::Config(format!("reward weights must be finite and non-negative: {self:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(EnvError::Config("reward weights cannot all be zero".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.info * factor, self.energy * factor, self.redundancy * factor)
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::new(0.5, 0.2, 0.3)
    }
}

impl fmt::Display for RewardWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.info, self.energy, self.redundancy)
    }
}

/// Per-kind energy of one sample (mJ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
    pub voltage: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self { temperature: 1.0, humidity: 1.2, light: 0.8, voltage: 0.6 }
    }
}

impl CostTable {
    pub fn get(&self, kind: ChannelKind) -> f64 {
        match kind {
            ChannelKind::Temperature => self.temperature,
            ChannelKind::Humidity => self.humidity,
            ChannelKind::Light => self.light,
            ChannelKind::Voltage => self.voltage,
        }
    }

    pub fn max(&self) -> f64 {
        ChannelKind::ALL.iter().map(|&k| self.get(k)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// `A = {skip, sample}`.
    #[default]
    Binary,
    /// `A = {sample then sleep d | d ∈ {1, 2, 4, 8}}`.
    Interval,
}

/// Sleep lengths of the interval action set, in epochs.
pub const INTERVAL_SLEEPS: [usize; 4] = [1, 2, 4, 8];

/// What a sensor does in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingAction {
    Skip,
    /// Sample now, then stay dormant for `sleep − 1` epochs.
    Sample { sleep: usize },
}

impl SamplingAction {
    pub fn is_sample(self) -> bool {
        matches!(self, SamplingAction::Sample { .. })
    }

    pub fn label(self) -> String {
        match self {
            SamplingAction::Skip => "skip".into(),
            SamplingAction::Sample { sleep: 1 } => "sample".into(),
            SamplingAction::Sample { sleep } => format!("sample_sleep{sleep}"),
        }
    }
}

impl ActionMode {
    pub fn action_count(self) -> usize {
        match self {
            ActionMode::Binary => 2,
            ActionMode::Interval => INTERVAL_SLEEPS.len(),
        }
    }

    pub fn decode(self, index: usize) -> Result<SamplingAction, EnvError> {
        match (self, index) {
            (ActionMode::Binary, 0) => Ok(SamplingAction::Skip),
            (ActionMode::Binary, 1) => Ok(SamplingAction::Sample { sleep: 1 }),
            (ActionMode::Interval, i) if i < INTERVAL_SLEEPS.len() => Ok(SamplingAction::Sample { sleep: INTERVAL_SLEEPS[i] }),
            _ => Err(EnvError::RejectedAction { sensor: None, reason: format!("action index {index} outside {self:?} set") }),
        }
    }

    /// Index of the plain "sample now" action.
    pub fn sample_index(self) -> usize {
        match self {
            ActionMode::Binary => 1,
            ActionMode::Interval => 0,
        }
    }

    /// Index of the action closest to "do not sample": skip, or the longest sleep.
    pub fn idle_index(self) -> usize {
        match self {
            ActionMode::Binary => 0,
            ActionMode::Interval => INTERVAL_SLEEPS.len() - 1,
        }
    }
}

/// Shape of one synthetic channel in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub base: f64,
    pub diurnal_amplitude: f64,
    /// Phase of the diurnal sinusoid as a fraction of a day.
    pub diurnal_phase: f64,
    /// Standard deviation of one random-walk increment.
    pub walk_std: f64,
    /// Per-epoch probability that a step event starts (when none is active).
    pub event_rate: f64,
    pub event_min_amplitude: f64,
    pub event_max_amplitude: f64,
    /// Epochs a step holds before the signal returns to baseline.
    pub event_min_duration: usize,
    pub event_max_duration: usize,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self::for_kind(ChannelKind::Temperature)
    }
}

impl SynthProfile {
    pub fn for_kind(kind: ChannelKind) -> Self {
        let (base, diurnal, phase, walk, amp) = match kind {
            ChannelKind::Temperature => (21.0, 2.0, 0.0, 0.04, 1.0),
            ChannelKind::Humidity => (38.0, 4.0, 0.5, 0.075, 2.0),
            ChannelKind::Light => (250.0, 200.0, 0.25, 3.0, 100.0),
            ChannelKind::Voltage => (2.65, 0.01, 0.75, 0.00025, 0.005),
        };
        Self {
            base,
            diurnal_amplitude: diurnal,
            diurnal_phase: phase,
            walk_std: walk,
            event_rate: 0.02,
            event_min_amplitude: amp,
            event_max_amplitude: 2.0 * amp,
            event_min_duration: 4,
            event_max_duration: 16,
        }
    }

    /// A profile with neither events nor random walk: a pure sinusoid.
    pub fn sinusoid(base: f64, amplitude: f64) -> Self {
        Self {
            base,
            diurnal_amplitude: amplitude,
            diurnal_phase: 0.0,
            walk_std: 0.0,
            event_rate: 0.0,
            event_min_amplitude: 0.0,
            event_max_amplitude: 0.0,
            event_min_duration: 1,
            event_max_duration: 1,
        }
    }

    fn validate(&self, kind: ChannelKind) -> Result<(), EnvError> {
        let bad = |what: &str| Err(EnvError::Config(format!("synthetic {kind}: {what}")));
        if ![self.base, self.diurnal_amplitude, self.diurnal_phase, self.walk_std].iter().all(|v| v.is_finite()) {
            return bad("non-finite shape parameter");
        }
        if self.walk_std < 0.0 {
            return bad("walk_std must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.event_rate) {
            return bad("event_rate must lie in [0, 1]");
        }
        if !(0.0 <= self.event_min_amplitude && self.event_min_amplitude <= self.event_max_amplitude) {
            return bad("event amplitudes must satisfy 0 <= min <= max");
        }
        if !(1 <= self.event_min_duration && self.event_min_duration <= self.event_max_duration) {
            return bad("event durations must satisfy 1 <= min <= max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthProfiles {
    #[serde(default = "SynthProfiles::temperature")]
    pub temperature: SynthProfile,
    #[serde(default = "SynthProfiles::humidity")]
    pub humidity: SynthProfile,
    #[serde(default = "SynthProfiles::light")]
    pub light: SynthProfile,
    #[serde(default = "SynthProfiles::voltage")]
    pub voltage: SynthProfile,
}

impl SynthProfiles {
    fn temperature() -> SynthProfile {
        SynthProfile::for_kind(ChannelKind::Temperature)
    }
    fn humidity() -> SynthProfile {
        SynthProfile::for_kind(ChannelKind::Humidity)
    }
    fn light() -> SynthProfile {
        SynthProfile::for_kind(ChannelKind::Light)
    }
    fn voltage() -> SynthProfile {
        SynthProfile::for_kind(ChannelKind::Voltage)
    }

    pub fn get(&self, kind: ChannelKind) -> &SynthProfile {
        match kind {
            ChannelKind::Temperature => &self.temperature,
            ChannelKind::Humidity => &self.humidity,
            ChannelKind::Light => &self.light,
            ChannelKind::Voltage => &self.voltage,
        }
    }

    pub fn get_mut(&mut self, kind: ChannelKind) -> &mut SynthProfile {
        match kind {
            ChannelKind::Temperature => &mut self.temperature,
            ChannelKind::Humidity => &mut self.humidity,
            ChannelKind::Light => &mut self.light,
            ChannelKind::Voltage => &mut self.voltage,
        }
    }
}

impl Default for SynthProfiles {
    fn default() -> Self {
        Self { temperature: Self::temperature(), humidity: Self::humidity(), light: Self::light(), voltage: Self::voltage() }
    }
}

/// Trace-replay signal source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    /// Trace file; relative paths resolve against the config file's directory.
    pub trace: PathBuf,
    /// Mote feeding each sensor, in sensor order.
    pub motes: Vec<u32>,
    #[serde(default)]
    pub cleaning: CleaningRules,
    #[serde(default)]
    pub gap: GapPolicy,
    /// Half-open slot range `[start, end)` episodes may draw from (train/test split).
    #[serde(default)]
    pub slot_range: Option<[usize; 2]>,
    /// Draw the episode window from the seed instead of starting at the first eligible one.
    #[serde(default)]
    pub random_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    #[default]
    Synthetic,
    Replay(ReplayConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub sensors: Vec<ChannelKind>,
    /// Epochs per episode (T).
    pub epochs: usize,
    /// Length of the diurnal cycle in epochs.
    pub epochs_per_day: f64,
    pub action_mode: ActionMode,
    pub sample_cost: CostTable,
    pub idle_cost: f64,
    pub initial_battery: f64,
    /// δ_red as a fraction of the channel range.
    pub redundancy_threshold: f64,
    /// β_noise: interference noise standard deviation at η = 1, as a fraction of range.
    pub noise_scale: f64,
    /// Sample-loss probability at η = 1.
    pub drop_probability: f64,
    /// Interference level η ∈ [0, 1].
    pub interference: f64,
    pub weights: RewardWeights,
    pub source: SourceConfig,
    pub synthetic: SynthProfiles,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sensors: ChannelKind::ALL.to_vec(),
            epochs: 200,
            epochs_per_day: 24.0,
            action_mode: ActionMode::Binary,
            sample_cost: CostTable::default(),
            idle_cost: 0.05,
            initial_battery: 300.0,
            redundancy_threshold: 0.05,
            noise_scale: 0.2,
            drop_probability: 0.1,
            interference: 0.0,
            weights: RewardWeights::default(),
            source: SourceConfig::Synthetic,
            synthetic: SynthProfiles::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Config(msg));
        if self.sensors.is_empty() {
            return bad("at least one sensor is required".into());
        }
        if self.epochs < 2 {
            return bad(format!("epochs per episode must be >= 2, got {}", self.epochs));
        }
        if !(self.epochs_per_day > 0.0 && self.epochs_per_day.is_finite()) {
            return bad(format!("epochs_per_day must be positive, got {}", self.epochs_per_day));
        }
        let costs = [self.sample_cost.temperature, self.sample_cost.humidity, self.sample_cost.light, self.sample_cost.voltage, self.idle_cost];
        if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return bad("energy costs must be finite and >= 0".into());
        }
        if !(self.initial_battery.is_finite() && self.initial_battery >= 0.0) {
            return bad(format!("initial battery {}", self.initial_battery));
        }
        if !(0.0..=1.0).contains(&self.interference) {
            return bad(format!("interference level {} outside [0, 1]", self.interference));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad(format!("drop probability {} outside [0, 1]", self.drop_probability));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!("noise scale {}", self.noise_scale));
        }
        if !(self.redundancy_threshold.is_finite() && self.redundancy_threshold >= 0.0) {
            return bad(format!("redundancy threshold {}", self.redundancy_threshold));
        }
        self.weights.validate()?;
        for kind in ChannelKind::ALL {
            self.synthetic.get(kind).validate(kind)?;
        }
        if let SourceConfig::Replay(replay) = &self.source {
            if replay.motes.len() != self.sensors.len() {
                return bad(format!("replay lists {} motes for {} sensors", replay.motes.len(), self.sensors.len()));
            }
            if let Some([start, end]) = replay.slot_range {
                if start >= end {
                    return bad(format!("empty slot range [{start}, {end})"));
                }
            }
        }
        Ok(())
    }

    /// Largest per-action energy in the configuration; normalizes `C(a)`.
    pub fn max_action_cost(&self) -> f64 {
        self.sample_cost.max().max(self.idle_cost)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EnvError> {
        let config: EnvConfig = toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("EnvConfig serializes to TOML")
    }
}
