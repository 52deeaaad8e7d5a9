use std::fmt::Write as _;
use std::path::Path;

use super::{decay_epsilon, select_action, td_loss, AgentError, AgentHyperParams, ReplayPool, TargetUpdate, Transition};
use crate::env::{EnvConfig, SamplingAction, SensorEnv, OBS_DIM};
use crate::nn::{Adam, NetworkParams};
use crate::seed::{derive_seed, rng_for};

const INIT_STREAM: u64 = 0xA1;
const ACT_STREAM: u64 = 0xA2;
const REPLAY_STREAM: u64 = 0xA3;
const EPISODE_STREAM: u64 = 0xA4;

pub const CURVE_HEADER: &str = "episode,return,mean_loss,epsilon";

/// Result of one joint step of a multi-agent environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub rewards: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    /// The episode reached a terminal state; no bootstrapping past it.
    pub terminal: bool,
    /// The episode was cut off by a time limit; the last state is not terminal.
    pub truncated: bool,
}

/// What the training loop needs from an environment: a set of agents sharing
/// one Q-network, each acting on its own observation.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn agent_count(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    /// A dormant agent does not act this step.
    fn is_dormant(&self, _agent: usize) -> bool {
        false
    }
    /// `None` for dormant agents.
    fn step(&mut self, actions: &[Option<usize>]) -> Result<EnvStep, AgentError>;
}

impl Environment for SensorEnv {
    fn observation_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_count(&self) -> usize {
        SensorEnv::action_count(self)
    }

    fn agent_count(&self) -> usize {
        self.sensor_count()
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        SensorEnv::reset(self, seed).iter().map(|o| o.features().to_vec()).collect()
    }

    fn is_dormant(&self, agent: usize) -> bool {
        SensorEnv::is_dormant(self, agent)
    }

    fn step(&mut self, actions: &[Option<usize>]) -> Result<EnvStep, AgentError> {
        let mode = self.config().action_mode;
        let decoded = actions
            .iter()
            .map(|a| a.map_or(Ok(SamplingAction::Skip), |i| mode.decode(i)))
            .collect::<Result<Vec<_>, _>>()?;
        let out = SensorEnv::step(self, &decoded)?;
        Ok(EnvStep {
            rewards: out.rewards.iter().map(|r| r.total).collect(),
            observations: out.observations.iter().map(|o| o.features().to_vec()).collect(),
            // The sampling horizon is a time limit, not an absorbing state.
            terminal: false,
            truncated: out.done,
        })
    }
}

/// Single-agent deterministic MDP with one-hot state features; small enough
/// to solve exactly, which makes it a convergence check for the learner.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    /// `next[s][a]`
    pub next: Vec<Vec<usize>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub start: usize,
    /// Steps before the episode is truncated.
    pub horizon: usize,
    state: usize,
    t: usize,
}

impl TabularMdp {
    pub fn new(next: Vec<Vec<usize>>, reward: Vec<Vec<f64>>, start: usize, horizon: usize) -> Result<Self, AgentError> {
        let n = next.len();
        let actions = next.first().map_or(0, Vec::len);
        let shape_ok = n > 0
            && actions > 0
            && reward.len() == n
            && next.iter().all(|row| row.len() == actions && row.iter().all(|&s| s < n))
            && reward.iter().all(|row| row.len() == actions);
        if !shape_ok || start >= n || horizon == 0 {
            return Err(AgentError::Config("malformed tabular MDP".into()));
        }
        Ok(Self { next, reward, start, horizon, state: start, t: 0 })
    }

    pub fn state_count(&self) -> usize {
        self.next.len()
    }

    pub fn one_hot(&self, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.state_count()];
        v[state] = 1.0;
        v
    }
}

impl Environment for TabularMdp {
    fn observation_dim(&self) -> usize {
        self.state_count()
    }

    fn action_count(&self) -> usize {
        self.next[0].len()
    }

    fn agent_count(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Vec<Vec<f64>> {
        self.state = self.start;
        self.t = 0;
        vec![self.one_hot(self.state)]
    }

    fn step(&mut self, actions: &[Option<usize>]) -> Result<EnvStep, AgentError> {
        let a = match actions {
            [Some(a)] if *a < self.action_count() => *a,
            _ => return Err(AgentError::Rejected(format!("bad joint action {actions:?}"))),
        };
        if self.t >= self.horizon {
            return Err(AgentError::Rejected("episode is over".into()));
        }
        let r = self.reward[self.state][a];
        self.state = self.next[self.state][a];
        self.t += 1;
        Ok(EnvStep {
            rewards: vec![r],
            observations: vec![self.one_hot(self.state)],
            terminal: false,
            truncated: self.t >= self.horizon,
        })
    }
}

/// Per-episode training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    /// Sum of all agents' rewards.
    pub episode_return: f64,
    /// Mean TD loss over the episode's gradient steps, if any were taken.
    pub mean_loss: Option<f64>,
    /// ε used during the episode.
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub online: NetworkParams,
    pub target: NetworkParams,
    pub curve: Vec<EpisodeStats>,
    pub gradient_steps: usize,
}

impl TrainOutcome {
    /// `episode,return,mean_loss,epsilon`; `mean_loss` is empty before training starts.
    pub fn curve_csv(&self) -> String {
        let mut out = format!("{CURVE_HEADER}\n");
        for s in &self.curve {
            let loss = s.mean_loss.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", s.episode, s.episode_return, loss, s.epsilon);
        }
        out
    }
}

struct Pending {
    state: Vec<f64>,
    action: usize,
    reward: f64,
}

/// The Glorot-initialized network a training run with `seed` starts from.
pub fn initial_network(hyper: &AgentHyperParams, obs_dim: usize, actions: usize, seed: u64) -> Result<NetworkParams, AgentError> {
    Ok(NetworkParams::init(&hyper.network_dims(obs_dim, actions), &mut rng_for(seed, INIT_STREAM))?)
}

/// Train a shared Q-network on `env` for `episodes` episodes.
///
/// Every awake agent picks an ε-greedy action from the online network. A
/// transition is stored once the agent's next decision state is known, so an
/// action followed by dormant epochs is recorded as one transition carrying
/// the rewards accumulated in between. After warm-up, each environment step
/// is followed by `train_steps_per_env_step` Adam updates on uniform batches
/// and a target-network update. Bit-identical for equal inputs.
pub fn train<E: Environment>(env: &mut E, hyper: &AgentHyperParams, episodes: usize, seed: u64) -> Result<TrainOutcome, AgentError> {
    hyper.validate()?;
    let mut online = initial_network(hyper, env.observation_dim(), env.action_count(), seed)?;
    let mut target = online.clone();
    let mut adam = Adam::new(&online, hyper.optimizer)?;
    let mut act_rng = rng_for(seed, ACT_STREAM);
    let mut replay_rng = rng_for(seed, REPLAY_STREAM);
    let episode_root = derive_seed(seed, EPISODE_STREAM);
    let mut pool = ReplayPool::new(hyper.replay_capacity);
    let warmup = hyper.warmup.max(hyper.batch_size);
    let width = env.action_count();
    let dim = env.observation_dim();

    let mut epsilon = hyper.epsilon_start;
    let mut curve = Vec::with_capacity(episodes);
    let mut gradient_steps = 0usize;

    for episode in 0..episodes {
        let mut observations = env.reset(derive_seed(episode_root, episode as u64));
        let agents = env.agent_count();
        let mut pending: Vec<Option<Pending>> = (0..agents).map(|_| None).collect();
        let mut episode_return = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        loop {
            let awake: Vec<usize> = (0..agents).filter(|&i| !env.is_dormant(i)).collect();
            let mut actions = vec![None; agents];
            if !awake.is_empty() {
                let mut inputs = Vec::with_capacity(awake.len() * dim);
                for &i in &awake {
                    inputs.extend_from_slice(&observations[i]);
                }
                let q = online.forward_batch(&inputs, awake.len())?;
                for (k, &i) in awake.iter().enumerate() {
                    let a = select_action(&q[k * width..(k + 1) * width], epsilon, &mut act_rng);
                    actions[i] = Some(a);
                    pending[i] = Some(Pending { state: observations[i].clone(), action: a, reward: 0.0 });
                }
            }

            let out = env.step(&actions)?;
            let ended = out.terminal || out.truncated;
            for i in 0..agents {
                episode_return += out.rewards[i];
                let Some(p) = pending[i].as_mut() else { continue };
                p.reward += out.rewards[i];
                if ended || !env.is_dormant(i) {
                    let p = pending[i].take().expect("checked above");
                    pool.push(Transition {
                        state: p.state,
                        action: p.action,
                        reward: p.reward,
                        next_state: out.observations[i].clone(),
                        done: out.terminal,
                    });
                }
            }
            observations = out.observations;

            if pool.len() >= warmup {
                for _ in 0..hyper.train_steps_per_env_step {
                    let batch = pool.sample(hyper.batch_size, &mut replay_rng).expect("pool holds at least one batch");
                    let (loss, grads) = td_loss(&batch, &online, &target, hyper.gamma)?;
                    adam.step(&mut online, &grads)?;
                    gradient_steps += 1;
                    match hyper.target_update {
                        TargetUpdate::Soft { tau } => target.soft_update_from(&online, tau)?,
                        TargetUpdate::Hard { every } => {
                            if gradient_steps.is_multiple_of(every) {
                                target = online.clone();
                            }
                        }
                    }
                    loss_sum += loss;
                    loss_count += 1;
                }
            }
            if ended {
                break;
            }
        }

        curve.push(EpisodeStats {
            episode,
            episode_return,
            mean_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            epsilon,
        });
        epsilon = decay_epsilon(epsilon, hyper.epsilon_decay, hyper.epsilon_min);
    }

    Ok(TrainOutcome { online, target, curve, gradient_steps })
}

/// Build the sensor environment described by `config` and train on it.
pub fn train_sensor(
    config: &EnvConfig,
    base_dir: Option<&Path>,
    hyper: &AgentHyperParams,
    episodes: usize,
    seed: u64,
) -> Result<TrainOutcome, AgentError> {
    let mut env = SensorEnv::new(config.clone(), base_dir)?;
    train(&mut env, hyper, episodes, seed)
}
