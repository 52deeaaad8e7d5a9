//! Policy comparison, reward-weight sweep and interference sweep.
//!
//! Every cell of an experiment is seeded from the experiment seed alone, so
//! a rerun with the same configuration reproduces its CSV byte for byte.

mod manifest;
mod plot;

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{sha256_hex, Manifest, OutputDigest};
pub use plot::{emit_plotdata, parse_plotdata, PlotData};

use crate::agent::{rollout, train, AgentError, AgentHyperParams, BaselinePolicy, GreedyPolicy, PolicyKind, SamplingPolicy, TrainOutcome};
use crate::env::{EnvConfig, EnvError, ReplayData, RewardWeights, SensorEnv, SourceConfig};
use crate::metrics::{aggregate, report_csv_row, MetricSettings, MetricsError, MetricsReport, MetricsRow, REPORT_HEADER};
use crate::nn::{NetworkParams, NnError};
use crate::seed::derive_seed;

const EVAL_STREAM: u64 = 0xE7;

/// Weight triples of the reward-weight sweep.
pub const DEFAULT_WEIGHT_GRID: [[f64; 3]; 5] =
    [[0.6, 0.2, 0.2], [0.3, 0.3, 0.4], [0.2, 0.5, 0.3], [0.4, 0.4, 0.2], [0.5, 0.2, 0.3]];

pub const WEIGHT_SWEEP_HEADER_PREFIX: &str = "lambda_info,lambda_energy,lambda_redundancy";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl ExperimentError {
    /// True for failures caused by the filesystem rather than the configuration.
    pub fn is_io(&self) -> bool {
        match self {
            ExperimentError::Io { .. } => true,
            ExperimentError::Nn(NnError::Io(_)) => true,
            ExperimentError::Env(EnvError::Ingest(crate::ingest::IngestError::Io { .. })) => true,
            ExperimentError::Agent(AgentError::Env(EnvError::Ingest(crate::ingest::IngestError::Io { .. }))) => true,
            _ => false,
        }
    }
}

/// Environment seed of evaluation episode `episode` under experiment seed
/// `seed`; disjoint from the seeds training draws.
pub fn eval_episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(derive_seed(seed, EVAL_STREAM), episode as u64)
}

/// A policy entry of an experiment: a concrete policy, or a random policy
/// whose probability matches the DQN's measured energy for the same seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Kind(PolicyKind),
    RandomMatched,
}

impl FromStr for PolicySpec {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "random:match" {
            return Ok(PolicySpec::RandomMatched);
        }
        s.parse::<PolicyKind>().map(PolicySpec::Kind).map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Kind(k) => k.fmt(f),
            PolicySpec::RandomMatched => f.write_str("random:match"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    pub train_episodes: usize,
    /// Greedy evaluation episodes per seed.
    pub eval_episodes: usize,
    pub detection_window: usize,
    pub weight_grid: Vec<[f64; 3]>,
    pub interference_grid: Vec<f64>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            policies: ["fixed:1", "random:match", "threshold:0.05", "dqn"].map(String::from).to_vec(),
            seeds: vec![0, 1, 2],
            train_episodes: 300,
            eval_episodes: 20,
            detection_window: crate::metrics::DEFAULT_DETECTION_WINDOW,
            weight_grid: DEFAULT_WEIGHT_GRID.to_vec(),
            interference_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

/// Contents of an experiment file: `[env]`, `[agent]` and `[experiment]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentHyperParams,
    pub experiment: ExperimentSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML form; its hash identifies a run in the manifest.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.env.validate()?;
        self.agent.validate()?;
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(ExperimentError::Config("at least one seed is required".into()));
        }
        if e.eval_episodes == 0 {
            return Err(ExperimentError::Config("eval_episodes must be >= 1".into()));
        }
        let policies = self.policies()?;
        if policies.is_empty() {
            return Err(ExperimentError::Config("at least one policy is required".into()));
        }
        if policies.contains(&PolicySpec::RandomMatched) && !policies.contains(&PolicySpec::Kind(PolicyKind::Dqn)) {
            return Err(ExperimentError::Config("random:match needs dqn in the policy list".into()));
        }
        Ok(())
    }

    pub fn policies(&self) -> Result<Vec<PolicySpec>, ExperimentError> {
        self.experiment.policies.iter().map(|p| p.parse()).collect()
    }

    fn metric_settings(&self) -> MetricSettings {
        MetricSettings { redundancy_threshold: self.env.redundancy_threshold, detection_window: self.experiment.detection_window }
    }
}

/// Where the DQN policy comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DqnSource {
    /// Train a fresh agent per seed.
    Train,
    /// Load `qnet` snapshots; `{seed}` in the path is replaced by the seed.
    Checkpoint(String),
    /// No DQN available; listing `dqn` is a configuration error.
    None,
}

/// Per-seed weight-sweep cell output.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSweepRow {
    pub weights: RewardWeights,
    pub report: MetricsReport,
}

/// Per-η interference-sweep output.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceRow {
    pub eta: f64,
    pub report: MetricsReport,
}

/// Runs experiment cells against one configuration.
#[derive(Debug, Clone)]
pub struct Runner {
    config: ExperimentConfig,
    dqn: DqnSource,
    replay: Option<Arc<ReplayData>>,
    /// Trained networks keyed by environment and seed, shared between clones.
    trained: Arc<Mutex<HashMap<(String, u64), NetworkParams>>>,
}

impl Runner {
    /// `base_dir` resolves relative trace paths (normally the config file's directory).
    pub fn new(config: ExperimentConfig, dqn: DqnSource, base_dir: Option<&Path>) -> Result<Self, ExperimentError> {
        config.validate()?;
        let replay = match &config.env.source {
            SourceConfig::Synthetic => None,
            SourceConfig::Replay(r) => Some(Arc::new(ReplayData::load(r, &config.env.sensors, config.env.epochs, base_dir)?)),
        };
        let runner = Self { config, dqn, replay, trained: Arc::default() };
        if runner.dqn == DqnSource::None && runner.config.policies()?.contains(&PolicySpec::Kind(PolicyKind::Dqn)) {
            return Err(ExperimentError::Config("dqn listed but no checkpoint given and training not requested".into()));
        }
        Ok(runner)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// The same runner over different seeds. Agents already trained are
    /// reused by both runners.
    pub fn with_seeds(&self, seeds: Vec<u64>) -> Result<Self, ExperimentError> {
        let mut runner = self.clone();
        runner.config.experiment.seeds = seeds;
        runner.config.validate()?;
        Ok(runner)
    }

    pub fn make_env(&self, env: &EnvConfig) -> Result<SensorEnv, ExperimentError> {
        Ok(match &self.replay {
            Some(data) => SensorEnv::with_replay(env.clone(), Arc::clone(data))?,
            None => SensorEnv::synthetic(env.clone())?,
        })
    }

    /// Train on `env` with the configured hyperparameters.
    pub fn train(&self, env: &EnvConfig, seed: u64) -> Result<TrainOutcome, ExperimentError> {
        let mut sensor_env = self.make_env(env)?;
        Ok(train(&mut sensor_env, &self.config.agent, self.config.experiment.train_episodes, seed)?)
    }

    fn agent_for(&self, env: &EnvConfig, seed: u64) -> Result<NetworkParams, ExperimentError> {
        match &self.dqn {
            DqnSource::Train => {
                let key = (toml::to_string(env).expect("env config serializes"), seed);
                if let Some(params) = self.trained.lock().expect("cache lock").get(&key) {
                    return Ok(params.clone());
                }
                let params = self.train(env, seed)?.online;
                self.trained.lock().expect("cache lock").insert(key, params.clone());
                Ok(params)
            }
            DqnSource::Checkpoint(template) => {
                let path = PathBuf::from(template.replace("{seed}", &seed.to_string()));
                if !path.exists() {
                    return Err(ExperimentError::Config(format!("checkpoint {} does not exist", path.display())));
                }
                let params = NetworkParams::load(&path)?;
                let expected = self.config.agent.network_dims(crate::env::OBS_DIM, env.action_mode.action_count());
                if params.dims() != expected {
                    return Err(ExperimentError::Config(format!(
                        "checkpoint {} has layer widths {:?}, expected {:?}",
                        path.display(),
                        params.dims(),
                        expected
                    )));
                }
                Ok(params)
            }
            DqnSource::None => Err(ExperimentError::Config("no DQN source".into())),
        }
    }

    /// Mean metrics of `policy` over the seed's evaluation episodes.
    pub fn evaluate(&self, env: &EnvConfig, policy: &mut dyn SamplingPolicy, seed: u64) -> Result<MetricsRow, ExperimentError> {
        let mut sensor_env = self.make_env(env)?;
        let settings = self.config.metric_settings();
        let rows = (0..self.config.experiment.eval_episodes)
            .map(|k| rollout(&mut sensor_env, policy, eval_episode_seed(seed, k)).map(|log| MetricsRow::from_log(&log, settings)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MetricsRow::mean_of(&rows))
    }

    /// Random-policy probability whose expected energy equals `energy_mj`.
    pub fn matched_probability(&self, env: &EnvConfig, energy_mj: f64) -> f64 {
        let t = env.epochs as f64;
        let mean_cost = env.sensors.iter().map(|&k| env.sample_cost.get(k)).sum::<f64>() / env.sensors.len() as f64;
        if mean_cost <= env.idle_cost {
            return 0.0;
        }
        ((energy_mj / t - env.idle_cost) / (mean_cost - env.idle_cost)).clamp(0.0, 1.0)
    }

    /// Per-seed metrics of every listed policy, at each interference level
    /// in `etas`. The DQN is trained (or loaded) once per seed on `env`.
    fn seed_cells(&self, env: &EnvConfig, seed: u64, etas: &[f64]) -> Result<Vec<Vec<MetricsRow>>, ExperimentError> {
        let policies = self.config.policies()?;
        let has_dqn = policies.contains(&PolicySpec::Kind(PolicyKind::Dqn));
        let greedy = if has_dqn { Some(GreedyPolicy::new(self.agent_for(env, seed)?)) } else { None };
        let at = |eta: f64| EnvConfig { interference: eta, ..env.clone() };

        let mut dqn_rows = Vec::new();
        if let Some(g) = &greedy {
            for &eta in etas {
                dqn_rows.push(self.evaluate(&at(eta), &mut g.clone(), seed)?);
            }
        }
        let mut cells = Vec::with_capacity(policies.len());
        for spec in &policies {
            let mut per_eta = Vec::with_capacity(etas.len());
            for (i, &eta) in etas.iter().enumerate() {
                let row = match spec {
                    PolicySpec::Kind(PolicyKind::Dqn) => dqn_rows[i],
                    PolicySpec::Kind(kind) => self.evaluate(&at(eta), &mut BaselinePolicy::new(*kind)?, seed)?,
                    PolicySpec::RandomMatched => {
                        // Matched against the DQN's energy at the first level.
                        let q = self.matched_probability(env, dqn_rows[0].energy_mj);
                        self.evaluate(&at(eta), &mut BaselinePolicy::new(PolicyKind::Random { probability: q })?, seed)?
                    }
                };
                per_eta.push(row);
            }
            cells.push(per_eta);
        }
        Ok(cells)
    }

    fn aggregate_cells(&self, per_seed: &[Vec<Vec<MetricsRow>>], level_count: usize) -> Result<Vec<Vec<MetricsReport>>, ExperimentError> {
        let policies = self.config.policies()?;
        let seeds = &self.config.experiment.seeds;
        let mut out = Vec::with_capacity(policies.len());
        for (p, spec) in policies.iter().enumerate() {
            let mut per_level = Vec::with_capacity(level_count);
            for level in 0..level_count {
                let reports: Vec<MetricsReport> = seeds
                    .iter()
                    .zip(per_seed)
                    .map(|(&seed, cells)| MetricsReport::single(spec.to_string(), seed, cells[p][level]))
                    .collect();
                per_level.push(aggregate(&reports)?);
            }
            out.push(per_level);
        }
        Ok(out)
    }

    /// One report per listed policy, aggregated over seeds.
    pub fn run_compare(&self) -> Result<Vec<MetricsReport>, ExperimentError> {
        let env = &self.config.env;
        let per_seed = self
            .config
            .experiment
            .seeds
            .iter()
            .map(|&seed| self.seed_cells(env, seed, &[env.interference]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.aggregate_cells(&per_seed, 1)?.into_iter().map(|mut v| v.remove(0)).collect())
    }

    /// Rows ordered policy-major, triple-minor.
    pub fn run_weight_sweep(&self) -> Result<Vec<WeightSweepRow>, ExperimentError> {
        let grid = &self.config.experiment.weight_grid;
        if grid.len() < 2 {
            return Err(ExperimentError::Config("weight sweep needs at least two triples".into()));
        }
        let mut by_triple = Vec::with_capacity(grid.len());
        for &[info, energy, redundancy] in grid {
            let weights = RewardWeights::new(info, energy, redundancy);
            weights.validate()?;
            let env = EnvConfig { weights, ..self.config.env.clone() };
            let per_seed = self
                .config
                .experiment
                .seeds
                .iter()
                .map(|&seed| self.seed_cells(&env, seed, &[env.interference]))
                .collect::<Result<Vec<_>, _>>()?;
            by_triple.push((weights, self.aggregate_cells(&per_seed, 1)?));
        }
        let policies = self.config.policies()?.len();
        let mut rows = Vec::with_capacity(policies * grid.len());
        for p in 0..policies {
            for (weights, reports) in &by_triple {
                rows.push(WeightSweepRow { weights: *weights, report: reports[p][0].clone() });
            }
        }
        Ok(rows)
    }

    /// Agents trained at η = 0 and evaluated at every grid level. Rows are
    /// ordered policy-major, η-minor.
    pub fn run_interference_sweep(&self) -> Result<Vec<InterferenceRow>, ExperimentError> {
        let grid = &self.config.experiment.interference_grid;
        if grid.len() < 2 {
            return Err(ExperimentError::Config("interference sweep needs at least two levels".into()));
        }
        if let Some(eta) = grid.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(ExperimentError::Config(format!("interference level {eta} outside [0, 1]")));
        }
        let env = EnvConfig { interference: 0.0, ..self.config.env.clone() };
        let per_seed = self
            .config
            .experiment
            .seeds
            .iter()
            .map(|&seed| self.seed_cells(&env, seed, grid))
            .collect::<Result<Vec<_>, _>>()?;
        let reports = self.aggregate_cells(&per_seed, grid.len())?;
        Ok(reports
            .into_iter()
            .flat_map(|per_level| grid.iter().zip(per_level).map(|(&eta, report)| InterferenceRow { eta, report }).collect::<Vec<_>>())
            .collect())
    }
}

pub fn compare_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        let _ = writeln!(out, "{}", report_csv_row(r));
    }
    out
}

pub fn weight_sweep_csv(rows: &[WeightSweepRow]) -> String {
    let mut out = format!("{WEIGHT_SWEEP_HEADER_PREFIX},{REPORT_HEADER}\n");
    for r in rows {
        let w = r.weights;
        let _ = writeln!(out, "{},{},{},{}", w.info, w.energy, w.redundancy, report_csv_row(&r.report));
    }
    out
}

pub fn interference_csv(rows: &[InterferenceRow]) -> String {
    let mut out = format!("eta,{REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.eta, report_csv_row(&r.report));
    }
    out
}

/// Outcome of one directional check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn find<'a>(reports: &'a [MetricsReport], label: &str) -> Option<&'a MetricsReport> {
    reports.iter().find(|r| r.policy == label)
}

/// DQN against fixed(1) and energy-matched random sampling.
pub fn compare_checks(reports: &[MetricsReport]) -> Vec<Check> {
    let (Some(dqn), Some(fixed)) = (find(reports, "dqn"), find(reports, "fixed:1")) else {
        return vec![Check { name: "compare".into(), passed: false, detail: "needs dqn and fixed:1 rows".into() }];
    };
    let mut checks = vec![
        Check {
            name: "dqn energy below fixed:1".into(),
            passed: dqn.mean.energy_mj < fixed.mean.energy_mj,
            detail: format!("{:.2} vs {:.2} mJ", dqn.mean.energy_mj, fixed.mean.energy_mj),
        },
        Check {
            name: "dqn redundancy below fixed:1".into(),
            passed: dqn.mean.redundancy_pct < fixed.mean.redundancy_pct,
            detail: format!("{:.2} vs {:.2} %", dqn.mean.redundancy_pct, fixed.mean.redundancy_pct),
        },
    ];
    if let Some(random) = find(reports, "random:match") {
        checks.push(Check {
            name: "dqn detection at least energy-matched random".into(),
            passed: dqn.mean.detection_pct >= random.mean.detection_pct,
            detail: format!("{:.2} vs {:.2} %", dqn.mean.detection_pct, random.mean.detection_pct),
        });
    }
    checks
}

/// The energy-heaviest triple spends least; the information-heaviest keeps the best quality.
pub fn weight_sweep_checks(rows: &[WeightSweepRow], policy: &str) -> Vec<Check> {
    let rows: Vec<&WeightSweepRow> = rows.iter().filter(|r| r.report.policy == policy).collect();
    if rows.len() < 2 {
        return vec![Check { name: "weight sweep".into(), passed: false, detail: format!("fewer than two {policy} rows") }];
    }
    let by = |key: fn(&RewardWeights) -> f64| rows.iter().max_by(|a, b| key(&a.weights).total_cmp(&key(&b.weights))).copied();
    let min_energy = rows.iter().min_by(|a, b| a.report.mean.energy_mj.total_cmp(&b.report.mean.energy_mj)).copied();
    let max_quality = rows.iter().max_by(|a, b| a.report.mean.data_quality.total_cmp(&b.report.mean.data_quality)).copied();
    let (heavy_energy, heavy_info) = (by(|w| w.energy).expect("non-empty"), by(|w| w.info).expect("non-empty"));
    let (min_energy, max_quality) = (min_energy.expect("non-empty"), max_quality.expect("non-empty"));
    vec![
        Check {
            name: format!("{policy}: largest energy weight spends least"),
            passed: min_energy.weights == heavy_energy.weights,
            detail: format!("min energy at {} ({:.2} mJ)", min_energy.weights, min_energy.report.mean.energy_mj),
        },
        Check {
            name: format!("{policy}: largest information weight keeps best quality"),
            passed: max_quality.weights == heavy_info.weights,
            detail: format!("max quality at {} ({:.4})", max_quality.weights, max_quality.report.mean.data_quality),
        },
    ]
}

/// Mean quality at the highest η is no better than at the lowest for every
/// policy, and the DQN loses less quality than fixed(1) between the two.
/// Interior rises along the grid are reported in the detail but do not fail
/// the check.
pub fn interference_checks(rows: &[InterferenceRow]) -> Vec<Check> {
    let mut by_policy: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        by_policy.entry(r.report.policy.as_str()).or_default().push((r.eta, r.report.mean.data_quality));
    }
    let mut checks = Vec::new();
    let mut drops = BTreeMap::new();
    for (policy, mut points) in by_policy {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let rises: Vec<String> = points
            .windows(2)
            .filter(|w| w[1].1 > w[0].1)
            .map(|w| format!("{}→{}: {:.5}→{:.5}", w[0].0, w[1].0, w[0].1, w[1].1))
            .collect();
        let (first, last) = (points[0], *points.last().expect("non-empty"));
        drops.insert(policy, last.1 - first.1);
        let mut detail = format!("{:.5} at η={} → {:.5} at η={}", first.1, first.0, last.1, last.0);
        if !rises.is_empty() {
            let _ = write!(detail, "; interior rises {}", rises.join(", "));
        }
        checks.push(Check { name: format!("{policy}: quality non-increasing in interference"), passed: last.1 <= first.1, detail });
    }
    if let (Some(dqn), Some(fixed)) = (drops.get("dqn"), drops.get("fixed:1")) {
        checks.push(Check {
            name: "dqn quality drop smaller than fixed:1".into(),
            passed: dqn.abs() < fixed.abs(),
            detail: format!("{dqn:.4} vs {fixed:.4}"),
        });
    }
    checks
}
