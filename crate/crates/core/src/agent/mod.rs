//! Deep Q-learning agent and the non-learning baseline policies.

mod policy;
mod replay;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use policy::{rollout, BaselinePolicy, DecisionContext, GreedyPolicy, PolicyKind, SamplingPolicy};
pub use replay::{ReplayPool, Transition};
pub use train::{
    initial_network, train, train_sensor, EnvStep, Environment, EpisodeStats, TabularMdp, TrainOutcome, CURVE_HEADER,
};

use crate::env::EnvError;
use crate::nn::{AdamConfig, Gradients, NetworkParams, NnError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent setting: {0}")]
    Config(String),
    #[error("rejected input: {0}")]
    Rejected(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// How the target network follows the online network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetUpdate {
    /// Blend every training step with factor `tau`.
    Soft { tau: f64 },
    /// Copy the online weights every `every` training steps.
    Hard { every: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentHyperParams {
    pub gamma: f64,
    pub target_update: TargetUpdate,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Multiplicative ε decay applied once per episode.
    pub epsilon_decay: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Transitions collected before training starts.
    pub warmup: usize,
    pub train_steps_per_env_step: usize,
    pub hidden: Vec<usize>,
    pub optimizer: AdamConfig,
}

impl Default for AgentHyperParams {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            target_update: TargetUpdate::Soft { tau: 0.005 },
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            epsilon_decay: 0.99,
            batch_size: 64,
            replay_capacity: 50_000,
            warmup: 500,
            train_steps_per_env_step: 1,
            hidden: vec![64, 64],
            optimizer: AdamConfig::default(),
        }
    }
}

impl AgentHyperParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::Config(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        match self.target_update {
            TargetUpdate::Soft { tau } if !(tau > 0.0 && tau < 1.0) => return bad(format!("tau {tau} outside (0, 1)")),
            TargetUpdate::Hard { every: 0 } => return bad("hard target copy period must be > 0".into()),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_min) || self.epsilon_min > self.epsilon_start {
            return bad(format!("epsilon schedule {} -> {}", self.epsilon_start, self.epsilon_min));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad(format!("epsilon decay {} outside (0, 1]", self.epsilon_decay));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!("batch {} with replay capacity {}", self.batch_size, self.replay_capacity));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, AgentError> {
        let hyper: Self = toml::from_str(text).map_err(|e| AgentError::Config(e.to_string()))?;
        hyper.validate()?;
        Ok(hyper)
    }

    /// Layer widths for an input of `obs_dim` features and `actions` outputs.
    pub fn network_dims(&self, obs_dim: usize, actions: usize) -> Vec<usize> {
        std::iter::once(obs_dim).chain(self.hidden.iter().copied()).chain(std::iter::once(actions)).collect()
    }
}

/// `y = r` at a terminal transition, otherwise `r + γ·max(q_next)`.
pub fn bellman_target(reward: f64, gamma: f64, q_next: &[f64], done: bool) -> Result<f64, AgentError> {
    if q_next.is_empty() {
        return Err(AgentError::Rejected("empty next-state Q-values".into()));
    }
    if done {
        return Ok(reward);
    }
    let best = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(reward + gamma * best)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice: a uniform action with probability ε, the greedy one otherwise.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

pub fn decay_epsilon(epsilon: f64, decay: f64, floor: f64) -> f64 {
    (epsilon * decay).max(floor)
}

/// Mean squared Bellman residual against externally supplied targets, and its
/// gradient with respect to the online parameters.
pub fn td_loss_with_targets(
    states: &[f64],
    actions: &[usize],
    targets: &[f64],
    online: &NetworkParams,
) -> Result<(f64, Gradients), AgentError> {
    let batch = actions.len();
    if batch == 0 || targets.len() != batch {
        return Err(AgentError::Rejected(format!("batch of {batch} actions with {} targets", targets.len())));
    }
    let n_actions = online.output_dim();
    if let Some(a) = actions.iter().find(|a| **a >= n_actions) {
        return Err(AgentError::Rejected(format!("action {a} outside {n_actions} outputs")));
    }
    let trace = online.forward_trace(states, batch)?;
    let q = trace.output();
    let mut grad_out = vec![0.0; batch * n_actions];
    let mut loss = 0.0;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let residual = q[i * n_actions + a] - y;
        loss += residual * residual;
        grad_out[i * n_actions + a] = 2.0 * residual / batch as f64;
    }
    let grads = online.backward_trace(&trace, &grad_out)?;
    Ok((loss / batch as f64, grads))
}

/// TD loss over a batch, with Bellman targets computed from the target network.
pub fn td_loss(
    batch: &[&Transition],
    online: &NetworkParams,
    target: &NetworkParams,
    gamma: f64,
) -> Result<(f64, Gradients), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::Rejected("empty batch".into()));
    }
    let dim = online.input_dim();
    let mut states = Vec::with_capacity(batch.len() * dim);
    let mut next_states = Vec::with_capacity(batch.len() * dim);
    for t in batch {
        states.extend_from_slice(&t.state);
        next_states.extend_from_slice(&t.next_state);
    }
    let q_next = target.forward_batch(&next_states, batch.len())?;
    let width = target.output_dim();
    let targets = batch
        .iter()
        .zip(q_next.chunks_exact(width))
        .map(|(t, q)| bellman_target(t.reward, gamma, q, t.done))
        .collect::<Result<Vec<_>, _>>()?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    td_loss_with_targets(&states, &actions, &targets, online)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bellman_cases() {
        assert_eq!(bellman_target(1.0, 0.9, &[5.0, 9.0], true).unwrap(), 1.0);
        assert_eq!(bellman_target(0.7, 0.0, &[5.0, 9.0], false).unwrap(), 0.7);
        assert!((bellman_target(1.0, 0.9, &[2.0, 3.0], false).unwrap() - 3.7).abs() < 1e-15);
        assert!(bellman_target(1.0, 0.9, &[], false).is_err());
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(select_action(&[0.1, 0.9, 0.3], 0.0, &mut rng), 1);
        }
        assert_eq!(argmax(&[2.0, 2.0, 1.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn uniform_when_fully_exploring() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[select_action(&[0.0, 5.0, 1.0], 1.0, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 100_000.0 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn greedy_frequency_matches_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = (0..100_000).filter(|_| select_action(&[0.2, 0.1], 0.2, &mut rng) == 0).count();
        assert!((hits as f64 / 100_000.0 - 0.9).abs() < 0.01);
    }

    #[test]
    fn epsilon_decay_schedule() {
        assert_eq!(decay_epsilon(0.05, 0.995, 0.05), 0.05);
        assert_eq!(decay_epsilon(1.0, 0.995, 0.05), 0.995);
        let mut eps = 1.0;
        for k in 1..=1000 {
            eps = decay_epsilon(eps, 0.995, 0.05);
            let closed = (1.0f64 * 0.995f64.powi(k)).max(0.05);
            assert!((eps - closed).abs() < 1e-12);
            assert!(eps >= 0.05);
        }
    }

    fn linear_net(w: &[f64], b: &[f64]) -> NetworkParams {
        let outputs = b.len();
        let inputs = w.len() / outputs;
        NetworkParams::from_layers(vec![Layer::new(inputs, outputs, w.to_vec(), b.to_vec()).unwrap()]).unwrap()
    }

    #[test]
    fn zero_residual_gives_zero_loss() {
        // Q(s) = (s0, s1); target outputs zero, so y = r.
        let online = linear_net(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        let target = linear_net(&[0.0; 4], &[0.0, 0.0]);
        let t = Transition { state: vec![0.3, 0.8], action: 1, reward: 0.8, next_state: vec![0.0, 0.0], done: false };
        let (loss, grads) = td_loss(&[&t], &online, &target, 0.9).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn single_transition_hand_loss() {
        let online = linear_net(&[1.0, 2.0, -1.0, 0.5], &[0.1, -0.2]);
        let target = linear_net(&[0.5, 0.5, 1.0, -1.0], &[0.0, 0.3]);
        let t = Transition { state: vec![1.0, 2.0], action: 0, reward: 0.5, next_state: vec![2.0, 1.0], done: false };
        // Q(s, 0) = 1 + 4 + 0.1 = 5.1; target Q(s') = (1.5, 1.3); y = 0.5 + 0.9·1.5 = 1.85
        let (loss, _) = td_loss(&[&t], &online, &target, 0.9).unwrap();
        assert!((loss - (5.1f64 - 1.85).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn duplicating_batch_keeps_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let online = NetworkParams::init(&[3, 5, 2], &mut rng).unwrap();
        let target = NetworkParams::init(&[3, 5, 2], &mut rng).unwrap();
        let items: Vec<Transition> = (0..4)
            .map(|i| Transition {
                state: vec![i as f64 * 0.1, 0.5, -0.3],
                action: i % 2,
                reward: 0.2 * i as f64,
                next_state: vec![0.4, -0.1 * i as f64, 0.9],
                done: i == 3,
            })
            .collect();
        let once: Vec<&Transition> = items.iter().collect();
        let twice: Vec<&Transition> = items.iter().chain(items.iter()).collect();
        let (l1, g1) = td_loss(&once, &online, &target, 0.95).unwrap();
        let (l2, g2) = td_loss(&twice, &online, &target, 0.95).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let net = NetworkParams::zeros(&[2, 2]).unwrap();
        assert!(matches!(td_loss(&[], &net, &net, 0.9), Err(AgentError::Rejected(_))));
    }

    #[test]
    fn hyper_defaults_and_toml() {
        let h = AgentHyperParams::default();
        h.validate().unwrap();
        assert_eq!(h.network_dims(10, 2), vec![10, 64, 64, 2]);
        let parsed = AgentHyperParams::from_toml_str("gamma = 0.9\n[target_update]\nkind = \"hard\"\nevery = 100\n").unwrap();
        assert_eq!(parsed.gamma, 0.9);
        assert_eq!(parsed.target_update, TargetUpdate::Hard { every: 100 });
        assert!(AgentHyperParams::from_toml_str("gamma = 1.5").is_err());
        assert!(AgentHyperParams::from_toml_str("epsilon_min = 0.9\nepsilon_start = 0.5").is_err());
    }
}
