use super::*;
use proptest::prelude::*;

fn small_config(sensors: Vec<ChannelKind>) -> EnvConfig {
    EnvConfig { sensors, epochs: 20, ..EnvConfig::default() }
}

fn replay_env(series: Vec<Vec<f64>>, weights: RewardWeights) -> SensorEnv {
    let epochs = series[0].len();
    let sensors = vec![ChannelKind::Temperature; series.len()];
    let config = EnvConfig { sensors, epochs, weights, ..EnvConfig::default() };
    let data = ReplayData { series, windows: vec![0], epochs_per_day: 100.0, origin_phase: 0.0 };
    SensorEnv::with_replay(config, Arc::new(data)).unwrap()
}

const SAMPLE: SamplingAction = SamplingAction::Sample { sleep: 1 };
const SKIP: SamplingAction = SamplingAction::Skip;

#[test]
fn reset_fills_batteries() {
    let mut env = SensorEnv::synthetic(EnvConfig::default()).unwrap();
    for obs in env.reset(17) {
        assert_eq!(obs.battery(), 1.0);
    }
}

#[test]
fn reset_is_deterministic() {
    let mut a = SensorEnv::synthetic(EnvConfig::default()).unwrap();
    let mut b = SensorEnv::synthetic(EnvConfig::default()).unwrap();
    assert_eq!(a.reset(5), b.reset(5));
    assert_eq!(a.truth(2), b.truth(2));
    a.reset(6);
    assert_ne!(a.truth(0), b.truth(0));
}

#[test]
fn observation_shape() {
    let mut env = SensorEnv::synthetic(small_config(vec![ChannelKind::Light, ChannelKind::Voltage, ChannelKind::Humidity])).unwrap();
    let obs = env.reset(1);
    assert_eq!(obs.len(), 3);
    for (o, kind) in obs.iter().zip([ChannelKind::Light, ChannelKind::Voltage, ChannelKind::Humidity]) {
        assert_eq!(o.features().len(), OBS_DIM);
        assert_eq!(o.features()[6..].iter().sum::<f64>(), 1.0);
        assert_eq!(o.features()[6 + kind.index()], 1.0);
        assert!(o.features().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn all_skip_charges_idle_only() {
    let mut env = SensorEnv::synthetic(small_config(vec![ChannelKind::Temperature, ChannelKind::Light])).unwrap();
    env.reset(3);
    let out = env.step(&[SKIP, SKIP]).unwrap();
    for i in 0..2 {
        assert!(env.kept(i).is_empty());
        assert!((env.battery(i) - (300.0 - 0.05)).abs() < 1e-12);
        assert_eq!(out.rewards[i].info, 0.0);
        assert_eq!(out.rewards[i].duplicate, 0.0);
    }
}

#[test]
fn battery_boundary_sample_drains_to_zero() {
    let config = EnvConfig { sensors: vec![ChannelKind::Temperature], epochs: 5, initial_battery: 1.0, ..EnvConfig::default() };
    let mut env = SensorEnv::synthetic(config).unwrap();
    env.reset(0);
    env.step(&[SAMPLE]).unwrap();
    assert_eq!(env.battery(0), 0.0);
    assert_eq!(env.kept(0).len(), 1);
    assert!(env.is_dormant(0));
    assert!(matches!(env.step(&[SAMPLE]), Err(EnvError::RejectedAction { sensor: Some(0), .. })));
    env.step(&[SKIP]).unwrap();
    assert_eq!(env.battery(0), 0.0);
}

#[test]
fn scripted_episode_matches_hand_trace() {
    let config = EnvConfig { sensors: vec![ChannelKind::Humidity, ChannelKind::Voltage], epochs: 8, ..EnvConfig::default() };
    let mut env = SensorEnv::synthetic(config.clone()).unwrap();
    env.reset(42);
    let script = [[SAMPLE, SKIP], [SKIP, SKIP], [SAMPLE, SAMPLE], [SAMPLE, SKIP], [SKIP, SAMPLE]];
    let mut rewards = Vec::new();
    for joint in &script {
        rewards.push(env.step(joint).unwrap().rewards);
    }
    // Hand trace of the transition rules at η = 0.
    let max_cost = 1.2;
    for sensor in 0..2 {
        let truth = env.truth(sensor).to_vec();
        let (lo, hi) = truth.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let range = hi - lo;
        let cost = [1.2, 0.6][sensor];
        let mut kept: Vec<(usize, f64)> = Vec::new();
        let mut battery = 300.0;
        for (t, joint) in script.iter().enumerate() {
            let r = rewards[t][sensor];
            if joint[sensor] == SAMPLE {
                let estimate = kept.last().map_or(0.5 * (lo + hi), |k| k.1);
                let info = ((truth[t] - estimate).abs() / range).min(1.0);
                let dup = kept.last().map_or(0.0, |k| if (truth[t] - k.1).abs() < 0.05 * range { 1.0 } else { 0.0 });
                assert_eq!(r.info, info);
                assert_eq!(r.duplicate, dup);
                assert_eq!(r.cost, cost / max_cost);
                kept.push((t, truth[t]));
                battery -= cost;
            } else {
                assert_eq!(r.info, 0.0);
                assert_eq!(r.cost, 0.05 / max_cost);
                battery -= 0.05;
            }
            assert_eq!(r.total, 0.5 * r.info - 0.2 * r.cost - 0.3 * r.duplicate);
        }
        let got: Vec<(usize, f64)> = env.kept(sensor).iter().map(|k| (k.epoch, k.value)).collect();
        assert_eq!(got, kept);
        assert!((env.battery(sensor) - battery).abs() < 1e-12);
    }
}

#[test]
fn skip_reward_is_idle_penalty() {
    let env = replay_env(vec![vec![0.0, 1.0, 0.5, 0.2]], RewardWeights::new(0.5, 0.2, 0.3));
    let r = env.compute_reward(0, SKIP);
    assert_eq!(r.info, 0.0);
    assert_eq!(r.duplicate, 0.0);
    assert_eq!(r.cost, 0.05 / 1.2);
    assert_eq!(r.total, -0.2 * r.cost);
}

#[test]
fn half_range_deviation_pays_half() {
    // range 1, midpoint prior 0.5, truth at epoch 0 is 0.0
    let env = replay_env(vec![vec![0.0, 1.0, 0.5, 0.2]], RewardWeights::new(1.0, 0.0, 0.0));
    let r = env.compute_reward(0, SAMPLE);
    assert_eq!(r.info, 0.5);
    assert_eq!(r.total, 0.5);
}

#[test]
fn repeated_value_is_duplicate() {
    let w = RewardWeights::new(0.5, 0.2, 0.3);
    let mut env = replay_env(vec![vec![0.0, 0.0, 1.0, 0.5]], w);
    env.step(&[SAMPLE]).unwrap();
    let r = env.step(&[SAMPLE]).unwrap().rewards[0];
    assert_eq!(r.info, 0.0);
    assert_eq!(r.duplicate, 1.0);
    assert_eq!(r.total, -0.2 * r.cost - 0.3);
    assert_eq!(r.cost, 1.0 / 1.2);
}

#[test]
fn interval_mode_sleeps() {
    let config = EnvConfig { sensors: vec![ChannelKind::Light], epochs: 12, action_mode: ActionMode::Interval, ..EnvConfig::default() };
    let mut env = SensorEnv::synthetic(config).unwrap();
    env.reset(0);
    env.step(&[SamplingAction::Sample { sleep: 4 }]).unwrap();
    for _ in 0..3 {
        assert!(env.is_dormant(0));
        assert!(env.step(&[SamplingAction::Sample { sleep: 1 }]).is_err());
        env.step(&[SKIP]).unwrap();
    }
    assert!(!env.is_dormant(0));
    assert!(env.step(&[SKIP]).is_err());
    env.step(&[SamplingAction::Sample { sleep: 2 }]).unwrap();
    assert_eq!(env.kept(0).iter().map(|k| k.epoch).collect::<Vec<_>>(), vec![0, 4]);
}

#[test]
fn binary_mode_rejects_sleep_actions_and_wrong_arity() {
    let mut env = SensorEnv::synthetic(small_config(vec![ChannelKind::Light])).unwrap();
    assert!(env.step(&[SamplingAction::Sample { sleep: 4 }]).is_err());
    assert!(env.step(&[SKIP, SKIP]).is_err());
    assert_eq!(env.epoch(), 0);
}

#[test]
fn episode_runs_exactly_t_steps() {
    let mut env = SensorEnv::synthetic(small_config(vec![ChannelKind::Temperature])).unwrap();
    env.reset(9);
    let mut steps = 0;
    loop {
        steps += 1;
        if env.step(&[SAMPLE]).unwrap().done {
            break;
        }
    }
    assert_eq!(steps, 20);
    assert!(matches!(env.step(&[SKIP]), Err(EnvError::EpisodeOver)));
}

#[test]
fn replay_events_come_from_series() {
    let mut series: Vec<f64> = (0..60).map(|t| (t as f64 * 0.5).sin() * 0.01).collect();
    for v in &mut series[45..] {
        *v += 2.0;
    }
    let env = replay_env(vec![series], RewardWeights::default());
    assert_eq!(env.events(0), &[45]);
}

#[test]
fn episode_csv_has_one_row_per_sensor_epoch() {
    let mut env = SensorEnv::synthetic(small_config(vec![ChannelKind::Temperature, ChannelKind::Humidity])).unwrap();
    env.reset(2);
    env.step(&[SAMPLE, SKIP]).unwrap();
    env.step(&[SKIP, SAMPLE]).unwrap();
    let csv = env.episode_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,sensor,action,true_value,kept_value,info,cost,duplicate,reward");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0,0,sample,"));
    assert!(lines[2].starts_with("0,1,skip,"));
    assert_eq!(lines[2].split(',').nth(4), Some(""));
}

fn run_random_episode(seed: u64, eta: f64, weights: RewardWeights, pattern: &[bool]) -> (SensorEnv, Vec<Vec<RewardBreakdown>>, Vec<Vec<f64>>) {
    let config = EnvConfig { epochs: 40, interference: eta, weights, initial_battery: 30.0, ..EnvConfig::default() };
    let mut env = SensorEnv::synthetic(config).unwrap();
    env.reset(seed);
    let mut rewards = Vec::new();
    let mut batteries = vec![(0..4).map(|i| env.battery(i)).collect::<Vec<_>>()];
    let mut k = 0;
    while !env.is_done() {
        let joint: Vec<SamplingAction> = (0..4)
            .map(|i| {
                k += 1;
                if pattern[k % pattern.len()] && !env.is_dormant(i) { SAMPLE } else { SKIP }
            })
            .collect();
        rewards.push(env.step(&joint).unwrap().rewards);
        batteries.push((0..4).map(|i| env.battery(i)).collect());
    }
    (env, rewards, batteries)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn battery_monotone_and_non_negative(seed in 0u64..1000, pattern in prop::collection::vec(any::<bool>(), 1..16)) {
        let (_, _, batteries) = run_random_episode(seed, 0.3, RewardWeights::default(), &pattern);
        for w in batteries.windows(2) {
            for i in 0..4 {
                prop_assert!(w[1][i] <= w[0][i]);
                prop_assert!(w[1][i] >= 0.0);
            }
        }
    }

    #[test]
    fn rewards_recompose_and_scale_linearly(seed in 0u64..1000, pattern in prop::collection::vec(any::<bool>(), 1..16), eta in 0.0f64..1.0) {
        let w = RewardWeights::new(0.4, 0.4, 0.2);
        let (_, r1, _) = run_random_episode(seed, eta, w, &pattern);
        let (_, r2, _) = run_random_episode(seed, eta, w.scaled(2.0), &pattern);
        for (a, b) in r1.iter().flatten().zip(r2.iter().flatten()) {
            prop_assert_eq!(a.total, a.recompose(&w));
            prop_assert!((0.0..=1.0).contains(&a.info) && (0.0..=1.0).contains(&a.cost));
            prop_assert!(a.duplicate == 0.0 || a.duplicate == 1.0);
            prop_assert_eq!(b.total, 2.0 * a.total);
        }
    }

    #[test]
    fn noiseless_kept_values_are_truth(seed in 0u64..1000, pattern in prop::collection::vec(any::<bool>(), 1..16)) {
        let (env, _, _) = run_random_episode(seed, 0.0, RewardWeights::default(), &pattern);
        for i in 0..4 {
            for k in env.kept(i) {
                prop_assert_eq!(k.value, env.truth(i)[k.epoch]);
            }
        }
    }

    #[test]
    fn all_skip_never_keeps(seed in 0u64..1000, eta in 0.0f64..1.0) {
        let (env, _, _) = run_random_episode(seed, eta, RewardWeights::default(), &[false]);
        for i in 0..4 {
            prop_assert!(env.kept(i).is_empty());
        }
    }

    #[test]
    fn reward_argmax_invariant_to_weight_scale(seed in 0u64..500, prefix in 0usize..30, scale in 0.1f64..10.0) {
        let config = EnvConfig { epochs: 40, ..EnvConfig::default() };
        let mut env = SensorEnv::synthetic(config).unwrap();
        env.reset(seed);
        for t in 0..prefix {
            let a = if t % 3 == 0 { SAMPLE } else { SKIP };
            env.step(&[a; 4]).unwrap();
        }
        let argmax = |env: &SensorEnv, i| {
            let (skip, sample) = (env.compute_reward(i, SKIP).total, env.compute_reward(i, SAMPLE).total);
            if sample > skip { 1 } else { 0 }
        };
        let before: Vec<usize> = (0..4).map(|i| argmax(&env, i)).collect();
        let mut scaled = env.clone();
        scaled.config.weights = env.config.weights.scaled(scale);
        let after: Vec<usize> = (0..4).map(|i| argmax(&scaled, i)).collect();
        prop_assert_eq!(before, after);
    }
}
