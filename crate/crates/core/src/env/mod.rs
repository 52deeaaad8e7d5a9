//! Multi-sensor sampling MDP.
//!
//! Each epoch every sensor either samples its channel or idles. A shared
//! per-sensor decision is scored by
//! `R = λ1·I − λ2·C − λ3·D` where
//!
//! * `I = min(1, |truth − held estimate| / range)` for a kept sample, else 0,
//! * `C = energy of the action / largest per-action energy in the config`,
//! * `D = 1` when a kept sample lies within `δ_red·range` of the previous kept
//!   sample, else 0.
//!
//! The held estimate is the last kept value, or the midpoint of the
//! episode's ground-truth range before the first sample. The agent only
//! sees features derived from its own kept samples, never the true signal.
//!
//! Observation layout (`OBS_DIM = 10`):
//!
//! | index | feature |
//! |-------|---------|
//! | 0 | last kept value, min-max normalized and clamped to [0, 1] (0.5 before any sample) |
//! | 1 | epochs since last kept sample / T (epochs since start + 1 before any sample) |
//! | 2 | EWMA of the normalized slope between consecutive kept samples |
//! | 3 | remaining battery fraction |
//! | 4, 5 | sin and cos of the day phase |
//! | 6..10 | channel one-hot (temperature, humidity, light, voltage) |

mod config;
mod replay;
mod signal;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use config::{
    ActionMode, ChannelKind, CostTable, EnvConfig, ReplayConfig, RewardWeights, SamplingAction, SourceConfig,
    SynthProfile, SynthProfiles, INTERVAL_SLEEPS,
};
pub use replay::ReplayData;
pub use signal::{
    event_schedule, inject_interference, perturb, synth_signal, InterferenceParams, StepEvent, SyntheticSignal,
    EVENT_STREAM, WALK_STREAM,
};

use crate::ingest::IngestError;
use crate::metrics::{detect_events, min_max, value_range, EpisodeLog, KeptSample, SensorLog, DEFAULT_EVENT_STD_FACTOR, DEFAULT_EVENT_STD_WINDOW};
use crate::seed::{derive_seed, rng_for};

pub const OBS_DIM: usize = 10;
/// Smoothing factor of the slope feature.
pub const SLOPE_EWMA: f64 = 0.5;

const SIGNAL_STREAM: u64 = 0x51;
const NOISE_STREAM: u64 = 0x52;
const WINDOW_STREAM: u64 = 0x53;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("rejected action{}: {reason}", sensor.map(|s| format!(" for sensor {s}")).unwrap_or_default())]
    RejectedAction { sensor: Option<usize>, reason: String },
    #[error("episode is over; call reset")]
    EpisodeOver,
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Per-sensor features the agent sees at a decision epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn features(&self) -> &[f64] {
        &self.0
    }

    pub fn last_value(&self) -> f64 {
        self.0[0]
    }

    pub fn since_fraction(&self) -> f64 {
        self.0[1]
    }

    pub fn slope(&self) -> f64 {
        self.0[2]
    }

    pub fn battery(&self) -> f64 {
        self.0[3]
    }
}

/// Reward components of one sensor's action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub info: f64,
    pub cost: f64,
    pub duplicate: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn compose(info: f64, cost: f64, duplicate: f64, weights: &RewardWeights) -> Self {
        let total = weights.info * info - weights.energy * cost - weights.redundancy * duplicate;
        Self { info, cost, duplicate, total }
    }

    /// Recompute the total from the components.
    pub fn recompose(&self, weights: &RewardWeights) -> f64 {
        weights.info * self.info - weights.energy * self.cost - weights.redundancy * self.duplicate
    }
}

/// Everything `step` reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<RewardBreakdown>,
    pub observations: Vec<Observation>,
    pub done: bool,
}

/// One row of the episode CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub sensor: usize,
    pub action: SamplingAction,
    pub truth: f64,
    pub kept: Option<f64>,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone)]
struct SensorState {
    kind: ChannelKind,
    truth: Vec<f64>,
    events: Vec<usize>,
    midpoint: f64,
    lo: f64,
    range: f64,
    noise: Vec<f64>,
    loss: Vec<f64>,
    battery: f64,
    kept: Vec<KeptSample>,
    slope: f64,
    dormant_until: usize,
    ledger: Vec<f64>,
}

/// What sampling `truth[t]` would yield this epoch.
struct Attempt {
    measured: Option<f64>,
    reward: RewardBreakdown,
}

#[derive(Debug, Clone)]
pub struct SensorEnv {
    config: EnvConfig,
    replay: Option<Arc<ReplayData>>,
    sensors: Vec<SensorState>,
    epoch: usize,
    phase_offset: f64,
    epochs_per_day: f64,
    max_cost: f64,
    records: Vec<StepRecord>,
}

impl SensorEnv {
    /// Build an environment and reset it with seed 0. Replay traces are read
    /// from disk, resolving relative paths against `base_dir`.
    pub fn new(config: EnvConfig, base_dir: Option<&Path>) -> Result<Self, EnvError> {
        config.validate()?;
        let replay = match &config.source {
            SourceConfig::Synthetic => None,
            SourceConfig::Replay(r) => Some(Arc::new(ReplayData::load(r, &config.sensors, config.epochs, base_dir)?)),
        };
        Self::build(config, replay)
    }

    /// Build a replay environment over already-loaded data.
    pub fn with_replay(config: EnvConfig, data: Arc<ReplayData>) -> Result<Self, EnvError> {
        config.validate()?;
        if data.series.len() != config.sensors.len() {
            return Err(EnvError::Config("replay data does not match the sensor list".into()));
        }
        if data.windows.is_empty() {
            return Err(EnvError::Config("replay data has no eligible window".into()));
        }
        Self::build(config, Some(data))
    }

    pub fn synthetic(config: EnvConfig) -> Result<Self, EnvError> {
        if !matches!(config.source, SourceConfig::Synthetic) {
            return Err(EnvError::Config("expected a synthetic source".into()));
        }
        Self::new(config, None)
    }

    fn build(config: EnvConfig, replay: Option<Arc<ReplayData>>) -> Result<Self, EnvError> {
        let max_cost = config.max_action_cost();
        let epochs_per_day = replay.as_ref().map_or(config.epochs_per_day, |r| r.epochs_per_day);
        let mut env = Self {
            config,
            replay,
            sensors: Vec::new(),
            epoch: 0,
            phase_offset: 0.0,
            epochs_per_day,
            max_cost,
            records: Vec::new(),
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn sensor_count(&self) -> usize {
        self.config.sensors.len()
    }

    pub fn action_count(&self) -> usize {
        self.config.action_mode.action_count()
    }

    pub fn epochs(&self) -> usize {
        self.config.epochs
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Change η between episodes (robustness evaluation).
    pub fn set_interference(&mut self, eta: f64) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(EnvError::Config(format!("interference level {eta} outside [0, 1]")));
        }
        self.config.interference = eta;
        Ok(())
    }

    /// Start a new episode. Deterministic in `(config, seed)`.
    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        let t_len = self.config.epochs;
        let signal_root = derive_seed(seed, SIGNAL_STREAM);
        let (window_start, replay) = match &self.replay {
            Some(data) => {
                let random = matches!(&self.config.source, SourceConfig::Replay(r) if r.random_window);
                let idx = if random { rng_for(seed, WINDOW_STREAM).random_range(0..data.windows.len()) } else { 0 };
                (data.windows[idx], Some(Arc::clone(data)))
            }
            None => (0, None),
        };
        self.phase_offset = replay.as_ref().map_or(0.0, |r| r.origin_phase + window_start as f64);
        self.sensors = self
            .config
            .sensors
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let (truth, events) = match &replay {
                    Some(data) => {
                        let truth = data.series[i][window_start..window_start + t_len].to_vec();
                        let events = detect_events(&truth, DEFAULT_EVENT_STD_WINDOW, DEFAULT_EVENT_STD_FACTOR);
                        (truth, events)
                    }
                    None => {
                        let s = SyntheticSignal::generate(
                            self.config.synthetic.get(kind),
                            self.config.epochs_per_day,
                            derive_seed(signal_root, i as u64),
                            t_len,
                        );
                        let events = s.event_epochs();
                        (s.values, events)
                    }
                };
                let (lo, hi) = min_max(&truth);
                let mut noise_rng = rng_for(derive_seed(seed, NOISE_STREAM), i as u64);
                let mut noise = Vec::with_capacity(t_len);
                let mut loss = Vec::with_capacity(t_len);
                for _ in 0..t_len {
                    noise.push(noise_rng.sample::<f64, _>(StandardNormal));
                    loss.push(noise_rng.random::<f64>());
                }
                SensorState {
                    kind,
                    range: value_range(&truth),
                    midpoint: 0.5 * (lo + hi),
                    lo,
                    truth,
                    events,
                    noise,
                    loss,
                    battery: self.config.initial_battery,
                    kept: Vec::new(),
                    slope: 0.0,
                    dormant_until: 0,
                    ledger: Vec::with_capacity(t_len),
                }
            })
            .collect();
        self.epoch = 0;
        self.records.clear();
        self.observations()
    }

    /// True when the sensor must skip this epoch: asleep or out of energy.
    pub fn is_dormant(&self, sensor: usize) -> bool {
        let s = &self.sensors[sensor];
        self.epoch < s.dormant_until || s.battery <= 0.0
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.sensors.len()).map(|i| self.observe(i)).collect()
    }

    pub fn observe(&self, sensor: usize) -> Observation {
        let s = &self.sensors[sensor];
        let t = self.epoch;
        let t_len = self.config.epochs as f64;
        let (value, since) = match s.kept.last() {
            Some(k) => (((k.value - s.lo) / s.range).clamp(0.0, 1.0), (t - k.epoch) as f64),
            None => (((s.midpoint - s.lo) / s.range).clamp(0.0, 1.0), (t + 1) as f64),
        };
        let battery = if self.config.initial_battery > 0.0 {
            (s.battery / self.config.initial_battery).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let phase = std::f64::consts::TAU * (t as f64 + self.phase_offset) / self.epochs_per_day;
        let mut f = [0.0; OBS_DIM];
        f[0] = value;
        f[1] = since / t_len;
        f[2] = s.slope;
        f[3] = battery;
        f[4] = phase.sin();
        f[5] = phase.cos();
        f[6 + s.kind.index()] = 1.0;
        Observation(f)
    }

    fn nominal_cost(&self, sensor: usize, action: SamplingAction) -> f64 {
        match action {
            SamplingAction::Skip => self.config.idle_cost,
            SamplingAction::Sample { .. } => self.config.sample_cost.get(self.sensors[sensor].kind),
        }
    }

    fn interference(&self) -> InterferenceParams {
        InterferenceParams { noise_scale: self.config.noise_scale, drop_probability: self.config.drop_probability }
    }

    fn attempt(&self, sensor: usize, action: SamplingAction) -> Attempt {
        let s = &self.sensors[sensor];
        let t = self.epoch.min(self.config.epochs - 1);
        let cost = if self.max_cost > 0.0 { self.nominal_cost(sensor, action) / self.max_cost } else { 0.0 };
        let weights = &self.config.weights;
        if !action.is_sample() {
            return Attempt { measured: None, reward: RewardBreakdown::compose(0.0, cost, 0.0, weights) };
        }
        let truth = s.truth[t];
        let measured = perturb(truth, self.config.interference, s.range, self.interference(), s.noise[t], s.loss[t]);
        let Some(value) = measured else {
            return Attempt { measured, reward: RewardBreakdown::compose(0.0, cost, 0.0, weights) };
        };
        let estimate = s.kept.last().map_or(s.midpoint, |k| k.value);
        let info = ((truth - estimate).abs() / s.range).min(1.0);
        let duplicate = match s.kept.last() {
            Some(prev) if (value - prev.value).abs() < self.config.redundancy_threshold * s.range => 1.0,
            _ => 0.0,
        };
        Attempt { measured, reward: RewardBreakdown::compose(info, cost, duplicate, weights) }
    }

    /// Reward the given action would earn for `sensor` at the current epoch.
    pub fn compute_reward(&self, sensor: usize, action: SamplingAction) -> RewardBreakdown {
        self.attempt(sensor, action).reward
    }

    /// Advance one epoch with one action per sensor. Dormant sensors must be
    /// given `Skip`; the whole joint action is rejected otherwise.
    pub fn step(&mut self, actions: &[SamplingAction]) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeOver);
        }
        if actions.len() != self.sensors.len() {
            return Err(EnvError::RejectedAction {
                sensor: None,
                reason: format!("{} actions for {} sensors", actions.len(), self.sensors.len()),
            });
        }
        for (i, &a) in actions.iter().enumerate() {
            if a.is_sample() && self.is_dormant(i) {
                return Err(EnvError::RejectedAction { sensor: Some(i), reason: "sensor is dormant or out of energy".into() });
            }
            if let SamplingAction::Sample { sleep } = a {
                let allowed = match self.config.action_mode {
                    ActionMode::Binary => sleep == 1,
                    ActionMode::Interval => INTERVAL_SLEEPS.contains(&sleep),
                };
                if !allowed {
                    return Err(EnvError::RejectedAction { sensor: Some(i), reason: format!("sleep {sleep} not in action set") });
                }
            }
            if a == SamplingAction::Skip && self.config.action_mode == ActionMode::Interval && !self.is_dormant(i) {
                return Err(EnvError::RejectedAction { sensor: Some(i), reason: "interval mode has no skip for awake sensors".into() });
            }
        }
        let t = self.epoch;
        let mut rewards = Vec::with_capacity(actions.len());
        for (i, &action) in actions.iter().enumerate() {
            let attempt = self.attempt(i, action);
            let nominal = self.nominal_cost(i, action);
            let s = &mut self.sensors[i];
            let drawn = nominal.min(s.battery.max(0.0));
            s.battery = (s.battery - drawn).max(0.0);
            s.ledger.push(drawn);
            if let Some(value) = attempt.measured {
                if let Some(prev) = s.kept.last() {
                    let slope = (value - prev.value) / s.range / (t - prev.epoch) as f64;
                    s.slope = (1.0 - SLOPE_EWMA) * s.slope + SLOPE_EWMA * slope;
                }
                s.kept.push(KeptSample { epoch: t, value });
            }
            if let SamplingAction::Sample { sleep } = action {
                s.dormant_until = t + sleep;
            }
            self.records.push(StepRecord { epoch: t, sensor: i, action, truth: s.truth[t], kept: attempt.measured, reward: attempt.reward });
            rewards.push(attempt.reward);
        }
        self.epoch += 1;
        Ok(StepOutcome { rewards, observations: self.observations(), done: self.is_done() })
    }

    pub fn battery(&self, sensor: usize) -> f64 {
        self.sensors[sensor].battery
    }

    pub fn kept(&self, sensor: usize) -> &[KeptSample] {
        &self.sensors[sensor].kept
    }

    pub fn truth(&self, sensor: usize) -> &[f64] {
        &self.sensors[sensor].truth
    }

    pub fn events(&self, sensor: usize) -> &[usize] {
        &self.sensors[sensor].events
    }

    pub fn range(&self, sensor: usize) -> f64 {
        self.sensors[sensor].range
    }

    pub fn last_sample_epoch(&self, sensor: usize) -> Option<usize> {
        self.sensors[sensor].kept.last().map(|k| k.epoch)
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Log of the episode so far, for the metrics module.
    pub fn episode_log(&self) -> EpisodeLog {
        EpisodeLog {
            sensors: self
                .sensors
                .iter()
                .map(|s| SensorLog { truth: s.truth.clone(), kept: s.kept.clone(), ledger: s.ledger.clone(), events: s.events.clone() })
                .collect(),
        }
    }

    /// `epoch,sensor,action,true_value,kept_value,info,cost,duplicate,reward`;
    /// `kept_value` is empty when nothing was kept.
    pub fn episode_csv(&self) -> String {
        let mut out = String::from("epoch,sensor,action,true_value,kept_value,info,cost,duplicate,reward\n");
        for r in &self.records {
            let kept = r.kept.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.sensor,
                r.action.label(),
                r.truth,
                kept,
                r.reward.info,
                r.reward.cost,
                r.reward.duplicate,
                r.reward.total
            );
        }
        out
    }
}

#[cfg(test)]
mod tests;
