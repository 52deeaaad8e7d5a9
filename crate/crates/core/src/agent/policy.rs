use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, AgentError};
use crate::env::{ActionMode, Observation, SamplingAction, SensorEnv, INTERVAL_SLEEPS};
use crate::metrics::EpisodeLog;
use crate::nn::NetworkParams;
use crate::seed::rng_for;

const RANDOM_POLICY_STREAM: u64 = 0x70;

/// What a policy may look at when an awake sensor has to act.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub epoch: usize,
    pub epochs: usize,
    pub sensor: usize,
    pub mode: ActionMode,
    pub observation: &'a Observation,
    pub last_sample_epoch: Option<usize>,
    /// Samples kept so far this episode.
    pub kept_count: usize,
}

pub trait SamplingPolicy {
    fn label(&self) -> String;

    /// Called before every episode with that episode's seed.
    fn begin_episode(&mut self, _seed: u64) {}

    /// Action index in the context's action set.
    fn choose(&mut self, ctx: &DecisionContext<'_>) -> usize;
}

/// Policy families comparable in an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    /// Sample every `period` epochs.
    Fixed { period: usize },
    /// Sample with independent probability `probability` each epoch.
    Random { probability: f64 },
    /// Sample when the slope-extrapolated change since the last sample exceeds `trigger` (fraction of range).
    Threshold { trigger: f64 },
    Dqn,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Fixed { period } => write!(f, "fixed:{period}"),
            PolicyKind::Random { probability } => write!(f, "random:{probability}"),
            PolicyKind::Threshold { trigger } => write!(f, "threshold:{trigger}"),
            PolicyKind::Dqn => f.write_str("dqn"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AgentError::Config(format!("unknown policy '{s}'"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        match (name, arg) {
            ("dqn", None) => Ok(PolicyKind::Dqn),
            ("fixed", Some(a)) => match a.parse::<usize>() {
                Ok(period) if period > 0 => Ok(PolicyKind::Fixed { period }),
                _ => Err(AgentError::Config(format!("fixed period must be a positive integer, got '{a}'"))),
            },
            ("random", Some(a)) => match a.parse::<f64>() {
                Ok(p) if (0.0..=1.0).contains(&p) => Ok(PolicyKind::Random { probability: p }),
                _ => Err(AgentError::Config(format!("random probability must lie in [0, 1], got '{a}'"))),
            },
            ("threshold", Some(a)) => match a.parse::<f64>() {
                Ok(d) if d.is_finite() && d >= 0.0 => Ok(PolicyKind::Threshold { trigger: d }),
                _ => Err(AgentError::Config(format!("threshold must be finite and >= 0, got '{a}'"))),
            },
            _ => Err(bad()),
        }
    }
}

/// The non-learning baselines. In interval mode, "no sample" maps to the
/// longest sleep and a fixed period to the longest sleep not exceeding it.
#[derive(Debug, Clone)]
pub struct BaselinePolicy {
    kind: PolicyKind,
    rng: ChaCha8Rng,
}

impl BaselinePolicy {
    pub fn new(kind: PolicyKind) -> Result<Self, AgentError> {
        if kind == PolicyKind::Dqn {
            return Err(AgentError::Config("dqn is not a baseline".into()));
        }
        Ok(Self { kind, rng: rng_for(0, RANDOM_POLICY_STREAM) })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn wants_sample(&mut self, ctx: &DecisionContext<'_>) -> bool {
        match self.kind {
            PolicyKind::Fixed { period } => ctx.epoch.is_multiple_of(period),
            PolicyKind::Random { probability } => self.rng.random::<f64>() < probability,
            // The slope feature needs two kept samples before it means anything.
            PolicyKind::Threshold { trigger } => match ctx.last_sample_epoch {
                Some(last) if ctx.kept_count >= 2 => ctx.observation.slope().abs() * (ctx.epoch - last) as f64 > trigger,
                _ => true,
            },
            PolicyKind::Dqn => unreachable!("rejected at construction"),
        }
    }
}

impl SamplingPolicy for BaselinePolicy {
    fn label(&self) -> String {
        self.kind.to_string()
    }

    fn begin_episode(&mut self, seed: u64) {
        self.rng = rng_for(seed, RANDOM_POLICY_STREAM);
    }

    fn choose(&mut self, ctx: &DecisionContext<'_>) -> usize {
        if let (ActionMode::Interval, PolicyKind::Fixed { period }) = (ctx.mode, self.kind) {
            return INTERVAL_SLEEPS.iter().rposition(|&s| s <= period).unwrap_or(0);
        }
        if self.wants_sample(ctx) {
            ctx.mode.sample_index()
        } else {
            ctx.mode.idle_index()
        }
    }
}

/// Greedy policy of a trained Q-network.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    params: NetworkParams,
}

impl GreedyPolicy {
    pub fn new(params: NetworkParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }
}

impl SamplingPolicy for GreedyPolicy {
    fn label(&self) -> String {
        "dqn".into()
    }

    fn choose(&mut self, ctx: &DecisionContext<'_>) -> usize {
        let q = self.params.forward(ctx.observation.features()).expect("network input matches observation size");
        argmax(&q)
    }
}

/// Run one full episode of `policy` from `env.reset(seed)` and return its log.
pub fn rollout(env: &mut SensorEnv, policy: &mut dyn SamplingPolicy, seed: u64) -> Result<EpisodeLog, AgentError> {
    let mut observations = env.reset(seed);
    policy.begin_episode(seed);
    let mode = env.config().action_mode;
    while !env.is_done() {
        let mut actions = Vec::with_capacity(observations.len());
        for (sensor, obs) in observations.iter().enumerate() {
            if env.is_dormant(sensor) {
                actions.push(SamplingAction::Skip);
                continue;
            }
            let ctx = DecisionContext {
                epoch: env.epoch(),
                epochs: env.epochs(),
                sensor,
                mode,
                observation: obs,
                last_sample_epoch: env.last_sample_epoch(sensor),
                kept_count: env.kept(sensor).len(),
            };
            actions.push(mode.decode(policy.choose(&ctx))?);
        }
        observations = env.step(&actions)?.observations;
    }
    Ok(env.episode_log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    #[test]
    fn parse_and_display() {
        for s in ["fixed:1", "fixed:4", "random:0.3", "threshold:0.05", "dqn"] {
            assert_eq!(s.parse::<PolicyKind>().unwrap().to_string(), s);
        }
        for s in ["fixed:0", "fixed:x", "random:1.5", "threshold:-1", "greedy", "dqn:1", "fixed"] {
            assert!(s.parse::<PolicyKind>().is_err(), "{s}");
        }
    }

    #[test]
    fn fixed_period_two_samples_half() {
        let mut env = SensorEnv::synthetic(EnvConfig { sensors: vec![crate::env::ChannelKind::Temperature], epochs: 10, ..EnvConfig::default() }).unwrap();
        let mut p = BaselinePolicy::new(PolicyKind::Fixed { period: 2 }).unwrap();
        let log = rollout(&mut env, &mut p, 3).unwrap();
        let epochs: Vec<usize> = log.sensors[0].kept.iter().map(|k| k.epoch).collect();
        assert_eq!(epochs, vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn random_extremes() {
        let config = EnvConfig { epochs: 20, ..EnvConfig::default() };
        let mut env = SensorEnv::synthetic(config).unwrap();
        let mut never = BaselinePolicy::new(PolicyKind::Random { probability: 0.0 }).unwrap();
        let log = rollout(&mut env, &mut never, 1).unwrap();
        assert!(log.sensors.iter().all(|s| s.kept.is_empty()));
        let mut always = BaselinePolicy::new(PolicyKind::Random { probability: 1.0 }).unwrap();
        let log = rollout(&mut env, &mut always, 1).unwrap();
        assert!(log.sensors.iter().all(|s| s.kept.len() == 20));
    }

    #[test]
    fn threshold_samples_until_slope_is_known() {
        let mut env = SensorEnv::synthetic(EnvConfig { epochs: 5, ..EnvConfig::default() }).unwrap();
        let mut p = BaselinePolicy::new(PolicyKind::Threshold { trigger: 1e9 }).unwrap();
        let log = rollout(&mut env, &mut p, 0).unwrap();
        for s in &log.sensors {
            let epochs: Vec<usize> = s.kept.iter().map(|k| k.epoch).collect();
            assert_eq!(epochs, vec![0, 1]);
        }
    }

    #[test]
    fn interval_fixed_uses_sleep() {
        let config = EnvConfig { action_mode: ActionMode::Interval, epochs: 16, sensors: vec![crate::env::ChannelKind::Light], ..EnvConfig::default() };
        let mut env = SensorEnv::synthetic(config).unwrap();
        let mut p = BaselinePolicy::new(PolicyKind::Fixed { period: 5 }).unwrap();
        let log = rollout(&mut env, &mut p, 0).unwrap();
        let epochs: Vec<usize> = log.sensors[0].kept.iter().map(|k| k.epoch).collect();
        assert_eq!(epochs, vec![0, 4, 8, 12]);
    }

    #[test]
    fn dqn_is_not_a_baseline() {
        assert!(BaselinePolicy::new(PolicyKind::Dqn).is_err());
    }
}
