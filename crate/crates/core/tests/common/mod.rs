//! Independent reference implementations used as test oracles. They follow
//! the definitions directly, with plain loops and no shared code.

#![allow(dead_code)]

use adaptive_sampling::metrics::{EpisodeLog, KeptSample, SensorLog};
use adaptive_sampling::nn::NetworkParams;
use rand::Rng;

/// Dense ReLU network forward pass, one input row, written out by hand.
pub fn naive_forward(net: &NetworkParams, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let last = net.layers().len() - 1;
    for (k, layer) in net.layers().iter().enumerate() {
        let mut z = vec![0.0; layer.outputs()];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut s = layer.bias()[j];
            for (i, ai) in a.iter().enumerate() {
                s += layer.weight(j, i) * ai;
            }
            *zj = if k < last && s < 0.0 { 0.0 } else { s };
        }
        a = z;
    }
    a
}

/// Central finite-difference gradient of `f` at the network's flat parameters.
pub fn fd_gradient(net: &NetworkParams, h: f64, f: impl Fn(&NetworkParams) -> f64) -> Vec<f64> {
    let base = net.flatten();
    let mut probe = net.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_flat(&p).unwrap();
            let up = f(&probe);
            p[i] = base[i] - h;
            probe.set_flat(&p).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with a floor on the denominator so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn span(truth: &[f64]) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in truth {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    let range = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    (lo, hi, range)
}

pub fn oracle_quality(log: &EpisodeLog) -> f64 {
    let mut total = 0.0;
    for s in &log.sensors {
        if s.kept.is_empty() {
            continue;
        }
        let (lo, hi, range) = span(&s.truth);
        let mut se = 0.0;
        for (t, &truth) in s.truth.iter().enumerate() {
            // Latest kept sample at or before t, else the midpoint prior.
            let mut est = (lo + hi) / 2.0;
            for k in &s.kept {
                if k.epoch <= t {
                    est = k.value;
                }
            }
            se += (truth - est).powi(2);
        }
        let rmse = (se / s.truth.len() as f64).sqrt();
        total += f64::max(0.0, 1.0 - rmse / range);
    }
    total / log.sensors.len() as f64
}

pub fn oracle_redundancy(log: &EpisodeLog, threshold: f64) -> f64 {
    let mut total = 0.0;
    for s in &log.sensors {
        if s.kept.len() < 2 {
            continue;
        }
        let (_, _, range) = span(&s.truth);
        let mut dup = 0;
        for i in 1..s.kept.len() {
            if (s.kept[i].value - s.kept[i - 1].value).abs() < threshold * range {
                dup += 1;
            }
        }
        total += 100.0 * dup as f64 / s.kept.len() as f64;
    }
    total / log.sensors.len() as f64
}

pub fn oracle_detection(log: &EpisodeLog, window: usize) -> f64 {
    let mut total = 0.0;
    for s in &log.sensors {
        if s.events.is_empty() {
            total += 100.0;
            continue;
        }
        let hits = s.events.iter().filter(|&&e| s.kept.iter().any(|k| k.epoch >= e && k.epoch <= e + window)).count();
        total += 100.0 * hits as f64 / s.events.len() as f64;
    }
    total / log.sensors.len() as f64
}

/// A random small log: quantized values so exact duplicates occur.
pub fn random_log<R: Rng>(rng: &mut R) -> EpisodeLog {
    let sensors = rng.random_range(1..=4);
    EpisodeLog {
        sensors: (0..sensors)
            .map(|_| {
                let t = rng.random_range(2..=30);
                let truth: Vec<f64> = (0..t).map(|_| f64::from(rng.random_range(0..8u8)) * 0.5).collect();
                let p = rng.random::<f64>();
                let mut kept = Vec::new();
                for epoch in 0..t {
                    if rng.random::<f64>() < p {
                        let jitter = if rng.random::<f64>() < 0.2 { 0.1 } else { 0.0 };
                        kept.push(KeptSample { epoch, value: truth[epoch] + jitter });
                    }
                }
                let ledger = (0..t).map(|_| rng.random_range(0.0..1.5)).collect();
                let events = (0..t).filter(|_| rng.random::<f64>() < 0.1).collect();
                SensorLog { truth, kept, ledger, events }
            })
            .collect(),
    }
}

/// Optimal Q-values of a deterministic tabular MDP by value iteration.
pub fn value_iteration(next: &[Vec<usize>], reward: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = reward.iter().map(|row| vec![0.0; row.len()]).collect();
    for _ in 0..10_000 {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut delta: f64 = 0.0;
        for s in 0..q.len() {
            for a in 0..q[s].len() {
                let updated = reward[s][a] + gamma * v[next[s][a]];
                delta = delta.max((updated - q[s][a]).abs());
                q[s][a] = updated;
            }
        }
        if delta < 1e-13 {
            break;
        }
    }
    q
}
