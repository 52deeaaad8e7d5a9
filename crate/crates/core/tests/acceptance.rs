//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test --test acceptance`.
//!
//! The experiment criteria (6–8) share one runner, so an agent trained for
//! the comparison is reused by the weight and interference sweeps.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use adaptive_sampling::agent::{
    argmax, bellman_target, select_action, td_loss, train, AgentHyperParams, TabularMdp, TargetUpdate, Transition,
};
use adaptive_sampling::env::ChannelKind;
use adaptive_sampling::experiment::{
    compare_checks, compare_csv, interference_checks, interference_csv, weight_sweep_checks, weight_sweep_csv, Check,
    DqnSource, ExperimentConfig, Manifest, Runner,
};
use adaptive_sampling::ingest::{ingest_text, CleaningRules, SkipReason};
use adaptive_sampling::metrics::{data_quality, event_detection_rate, redundancy_rate};
use adaptive_sampling::nn::NetworkParams;
use common::{fd_gradient, naive_forward, oracle_detection, oracle_quality, oracle_redundancy, random_log, rel_err, value_iteration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const EXACT_TOL: f64 = 1e-12;
const GREEDY_FREQ_TOL: f64 = 0.01;
const TABULAR_Q_TOL: f64 = 0.05;
const QUALITY_TOL: f64 = 1e-9;

const COMPARE_SEEDS: [u64; 3] = [0, 1, 2];
const WEIGHT_SEEDS: [u64; 3] = [0, 1, 2];
const INTERFERENCE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }

    fn from_checks(checks: &[Check]) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        let detail = checks
            .iter()
            .map(|c| format!("{} {}: {}", if c.passed { "ok" } else { "FAILED" }, c.name, c.detail))
            .collect::<Vec<_>>()
            .join(" | ");
        Self { passed, detail }
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let mut v = f();
    let took = start.elapsed();
    v.detail = format!("{} [{:.2} s]", v.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            v.passed = false;
            v.detail = format!("{} exceeds {} s limit", v.detail, limit.as_secs());
        }
    }
    v
}

fn random_generic_net(rng: &mut ChaCha8Rng) -> NetworkParams {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=5)];
    for _ in 0..depth {
        dims.push(rng.random_range(1..=6));
    }
    let mut net = NetworkParams::init(&dims, rng).unwrap();
    // Nonzero biases keep ReLU pre-activations away from exact kinks.
    let flat: Vec<f64> = (0..net.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_flat(&flat).unwrap();
    net
}

fn gradient_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let net = random_generic_net(&mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = net.backward(&x, &c).unwrap().flatten();
        let numeric = fd_gradient(&net, FD_STEP, |p| p.forward(&x).unwrap().iter().zip(&c).map(|(o, w)| o * w).sum());
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    Verdict::new(worst < FD_REL_TOL, format!("max relative error {worst:.2e} over 20 networks (limit {FD_REL_TOL:e})"))
}

fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
    Transition {
        state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        action: rng.random_range(0..2),
        reward: rng.random_range(-1.0..1.0),
        next_state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        done: rng.random::<f64>() < 0.3,
    }
}

fn bellman_and_loss() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let online = NetworkParams::init(&[3, 6, 2], &mut rng).unwrap();
        let target = NetworkParams::init(&[3, 6, 2], &mut rng).unwrap();
        let gamma = rng.random_range(0.0..1.0);
        let batch: Vec<Transition> = (0..rng.random_range(1..=8)).map(|_| random_transition(&mut rng)).collect();
        let mut brute = 0.0;
        for t in &batch {
            let q_next = naive_forward(&target, &t.next_state);
            let y = if t.done { t.reward } else { t.reward + gamma * q_next[0].max(q_next[1]) };
            worst = worst.max((bellman_target(t.reward, gamma, &q_next, t.done).unwrap() - y).abs());
            let e = y - naive_forward(&online, &t.state)[t.action];
            brute += e * e;
        }
        brute /= batch.len() as f64;
        let refs: Vec<&Transition> = batch.iter().collect();
        let (loss, _) = td_loss(&refs, &online, &target, gamma).unwrap();
        worst = worst.max((loss - brute).abs());
    }
    Verdict::new(worst < EXACT_TOL, format!("max absolute deviation {worst:.2e} over 100 batches (limit {EXACT_TOL:e})"))
}

fn soft_update_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let online = NetworkParams::init(&[4, 8, 3], &mut rng).unwrap();
    let mut target = NetworkParams::init(&[4, 8, 3], &mut rng).unwrap();
    let tau = 0.005;
    let start: Vec<f64> = target.flatten().iter().zip(online.flatten()).map(|(t, o)| t - o).collect();
    let mut worst: f64 = 0.0;
    for k in 1..=500 {
        target.soft_update_from(&online, tau).unwrap();
        let factor = (1.0 - tau).powi(k);
        for ((t, o), d0) in target.flatten().iter().zip(online.flatten()).zip(&start) {
            worst = worst.max(((t - o) - factor * d0).abs());
        }
    }
    Verdict::new(worst < EXACT_TOL, format!("max deviation from (1−τ)^k over 500 updates {worst:.2e} (limit {EXACT_TOL:e})"))
}

fn epsilon_greedy_statistics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let q = [0.1, 0.7];
    let draws = 100_000;
    let greedy = (0..draws).filter(|_| select_action(&q, 0.2, &mut rng) == 1).count();
    let freq = greedy as f64 / draws as f64;
    Verdict::new((freq - 0.9).abs() <= GREEDY_FREQ_TOL, format!("greedy frequency {freq:.4} (expected 0.900 ± {GREEDY_FREQ_TOL})"))
}

fn tabular_sanity() -> Verdict {
    let next = vec![vec![0, 1], vec![0, 1]];
    let reward = vec![vec![0.1, 0.0], vec![0.0, 1.0]];
    let gamma = 0.8;
    let oracle = value_iteration(&next, &reward, gamma);
    let mut mdp = TabularMdp::new(next, reward, 0, 20).unwrap();
    let hyper = AgentHyperParams {
        gamma,
        target_update: TargetUpdate::Soft { tau: 0.01 },
        epsilon_min: 0.5,
        epsilon_decay: 0.99,
        batch_size: 32,
        warmup: 64,
        hidden: vec![16],
        ..AgentHyperParams::default()
    };
    let out = train(&mut mdp, &hyper, 400, 1).unwrap();
    let mut policy_ok = true;
    let mut worst: f64 = 0.0;
    for (s, q_star) in oracle.iter().enumerate() {
        let q = out.online.forward(&mdp.one_hot(s)).unwrap();
        policy_ok &= argmax(&q) == argmax(q_star);
        for (a, b) in q.iter().zip(q_star) {
            worst = worst.max((a - b).abs());
        }
    }
    Verdict::new(
        policy_ok && worst < TABULAR_Q_TOL,
        format!("greedy policy {} optimal, max |Q − Q*| {worst:.4} (limit {TABULAR_Q_TOL})", if policy_ok { "is" } else { "is not" }),
    )
}

fn metrics_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (mut rate_mismatch, mut worst_quality) = (0, 0.0f64);
    for i in 0..1000 {
        let log = random_log(&mut rng);
        let delta = [0.0, 0.01, 0.05, 0.2][i % 4];
        let window = i % 4;
        rate_mismatch += usize::from(redundancy_rate(&log, delta) != oracle_redundancy(&log, delta));
        rate_mismatch += usize::from(event_detection_rate(&log, window) != oracle_detection(&log, window));
        worst_quality = worst_quality.max((data_quality(&log) - oracle_quality(&log)).abs());
    }
    Verdict::new(
        rate_mismatch == 0 && worst_quality < QUALITY_TOL,
        format!("{rate_mismatch} inexact rates, max quality deviation {worst_quality:.2e} over 1000 logs"),
    )
}

fn ingest_fabricated() -> Verdict {
    let text = "\
2004-02-28 00:59:16.5 1 1 19.0 37.0 45.0 2.70
date time epoch moteid temperature humidity light voltage
2004-02-28 00:59:50 2 2 20.0 38.0 46.0 2.69

2004-02-28 01:00:16.4 3 1 19.5 37.5 45.5 2.68
2004-02-28 01:01:00 7 1 19.0 37.0 45.0
2004-02-28 01:00:16.5 4 1 19.6 37.6 45.6 2.67
2004-02-28 01:01:00 8 0 19.0 37.0 45.0 2.6
2004-02-28 01:03:20 5 2 20.4 38.4 46.4 2.66
2004-02-28 01:01:00 9 1 122.153 37.0 45.0 2.6
2004-02-28 01:05:00 6 1 19.9 37.9 45.9 2.65
2004-02-28 01:01:00 10 1 nan 37.0 45.0 2.6
";
    let (aligned, report) = ingest_text(text, &CleaningRules::default()).unwrap();
    let counts = [
        report.kept,
        report.skipped_for(SkipReason::WrongFieldCount),
        report.skipped_for(SkipReason::Unparseable),
        report.skipped_for(SkipReason::InvalidId),
        report.skipped_for(SkipReason::Plausibility),
        report.slot_conflicts,
    ];
    // Slots of 60 s from 00:59:16.5; the reading at 59.9 s replaces the first.
    let temp = |mote: u32, slot: usize| {
        let m = &aligned.motes[&mote];
        m.present[slot].then(|| m.channel(ChannelKind::Temperature)[slot])
    };
    let (m1, m2) = (&aligned.motes[&1], &aligned.motes[&2]);
    let slots_ok = aligned.slots == 6
        && m1.present == [true, true, false, false, false, true]
        && m2.present == [true, false, false, false, true, false]
        && temp(1, 0) == Some(19.5)
        && temp(1, 1) == Some(19.6)
        && temp(1, 5) == Some(19.9)
        && temp(2, 4) == Some(20.4);
    let counts_ok = counts == [6, 2, 2, 1, 1, 1];
    Verdict::new(
        counts_ok && slots_ok,
        format!("kept/field-count/unparseable/invalid-id/plausibility/conflicts = {counts:?}, slot assignment {}", if slots_ok { "matches" } else { "differs" }),
    )
}

fn small_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.env.epochs = 30;
    config.agent.warmup = 32;
    config.agent.batch_size = 16;
    config.agent.hidden = vec![8];
    config.experiment.train_episodes = 3;
    config.experiment.eval_episodes = 2;
    config.experiment.seeds = vec![0, 1];
    config.experiment.weight_grid = vec![[0.6, 0.2, 0.2], [0.2, 0.5, 0.3]];
    config.experiment.interference_grid = vec![0.0, 0.5, 1.0];
    config
}

/// Every output of one full pass over a configuration, with its manifests.
fn all_outputs(config: &ExperimentConfig) -> Vec<String> {
    let runner = Runner::new(config.clone(), DqnSource::Train, None).unwrap();
    let toml = config.to_toml_string();
    let mut out = Vec::new();
    for (command, csv) in [
        ("compare", compare_csv(&runner.run_compare().unwrap())),
        ("sweep-weights", weight_sweep_csv(&runner.run_weight_sweep().unwrap())),
        ("sweep-interference", interference_csv(&runner.run_interference_sweep().unwrap())),
        ("train", runner.train(&config.env, 0).unwrap().curve_csv()),
    ] {
        let mut manifest = Manifest::new(command, &toml, &config.experiment.seeds);
        manifest.record("out.csv", csv.as_bytes());
        out.push(csv);
        out.push(manifest.to_json());
    }
    out
}

fn determinism() -> Verdict {
    let config = small_config();
    let first = all_outputs(&config);
    // A rerun starts from the configuration as recorded next to the outputs.
    let recorded = ExperimentConfig::from_toml_str(&config.to_toml_string()).unwrap();
    let second = all_outputs(&recorded);
    let same = first.len() == second.len() && first.iter().zip(&second).all(|(a, b)| a == b);
    let bytes: usize = first.iter().map(String::len).sum();
    Verdict::new(same, format!("{} outputs ({bytes} bytes) {}", first.len(), if same { "byte-identical" } else { "differ" }))
}

fn main() -> ExitCode {
    let runner = {
        let mut config = ExperimentConfig::default();
        config.experiment.seeds = COMPARE_SEEDS.to_vec();
        Runner::new(config, DqnSource::Train, None).unwrap()
    };
    let weight_runner = runner.with_seeds(WEIGHT_SEEDS.to_vec()).unwrap();
    let interference_runner = runner.with_seeds(INTERFERENCE_SEEDS.to_vec()).unwrap();

    type Criterion<'a> = (&'a str, Option<u64>, Box<dyn FnOnce() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("gradient fidelity", Some(5), Box::new(gradient_fidelity)),
        ("bellman target and TD loss oracle", Some(1), Box::new(bellman_and_loss)),
        ("soft-update algebra", None, Box::new(soft_update_algebra)),
        ("epsilon-greedy statistics", None, Box::new(epsilon_greedy_statistics)),
        ("tabular sanity", Some(30), Box::new(tabular_sanity)),
        (
            "policy comparison ordering (3 seeds)",
            Some(600),
            Box::new(|| {
                let reports = runner.run_compare().unwrap();
                print!("{}", indent(&compare_csv(&reports)));
                Verdict::from_checks(&compare_checks(&reports))
            }),
        ),
        (
            "reward-weight trends (3 seeds)",
            None,
            Box::new(|| {
                let rows = weight_runner.run_weight_sweep().unwrap();
                print!("{}", indent(&weight_sweep_csv(&rows)));
                Verdict::from_checks(&weight_sweep_checks(&rows, "dqn"))
            }),
        ),
        (
            "interference trend (5 seeds)",
            None,
            Box::new(|| {
                let rows = interference_runner.run_interference_sweep().unwrap();
                print!("{}", indent(&interference_csv(&rows)));
                Verdict::from_checks(&interference_checks(&rows))
            }),
        ),
        ("metrics oracles", None, Box::new(metrics_oracles)),
        ("ingest of fabricated trace", None, Box::new(ingest_fabricated)),
        ("determinism", None, Box::new(determinism)),
    ];

    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let v = timed(limit.map(Duration::from_secs), check);
        println!("{} {:>2}. {name}: {}", if v.passed { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}

fn indent(csv: &str) -> String {
    csv.lines().map(|l| format!("      {l}\n")).collect()
}
