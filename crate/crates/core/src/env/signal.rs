//! Synthetic ground-truth signals and interference.
//!
//! A synthetic channel is
//! `base + A·sin(2π(t / epochs_per_day + phase)) + walk(t) + step(t)`.
//! The walk and the step-event schedule draw from separate streams derived
//! from the signal seed (`WALK_STREAM`, `EVENT_STREAM`), so a longer series
//! always extends a shorter one with the same seed.
//!
//! Event schedule, walking `t` from 1: draw `u ~ U[0,1)`; if `u < event_rate`
//! draw a magnitude `U[min, max]`, a sign (fair coin) and a duration
//! `U{min..=max}`, record the event at `t` and resume at `t + duration`;
//! otherwise resume at `t + 1`. An event offsets the signal by its signed
//! amplitude for `duration` epochs.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::SynthProfile;
use crate::seed::rng_for;

pub const WALK_STREAM: u64 = 1;
pub const EVENT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent {
    pub onset: usize,
    /// Signed offset applied while the event holds.
    pub amplitude: f64,
    pub duration: usize,
}

pub fn event_schedule(profile: &SynthProfile, seed: u64, len: usize) -> Vec<StepEvent> {
    let mut rng = rng_for(seed, EVENT_STREAM);
    let mut events = Vec::new();
    let mut t = 1;
    while t < len {
        if rng.random::<f64>() < profile.event_rate {
            let magnitude = rng.random_range(profile.event_min_amplitude..=profile.event_max_amplitude);
            let amplitude = if rng.random::<bool>() { magnitude } else { -magnitude };
            let duration = rng.random_range(profile.event_min_duration..=profile.event_max_duration);
            events.push(StepEvent { onset: t, amplitude, duration });
            t += duration;
        } else {
            t += 1;
        }
    }
    events
}

/// A generated synthetic channel with its event ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSignal {
    pub values: Vec<f64>,
    pub events: Vec<StepEvent>,
}

impl SyntheticSignal {
    pub fn generate(profile: &SynthProfile, epochs_per_day: f64, seed: u64, len: usize) -> Self {
        let events = event_schedule(profile, seed, len);
        let mut offsets = vec![0.0; len];
        for e in &events {
            for v in offsets.iter_mut().skip(e.onset).take(e.duration) {
                *v += e.amplitude;
            }
        }
        let mut walk_rng = rng_for(seed, WALK_STREAM);
        let mut walk = 0.0;
        let values = (0..len)
            .map(|t| {
                if t > 0 {
                    let z: f64 = walk_rng.sample(StandardNormal);
                    walk += profile.walk_std * z;
                }
                diurnal(profile, epochs_per_day, t) + walk + offsets[t]
            })
            .collect();
        Self { values, events }
    }

    pub fn event_epochs(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.onset).collect()
    }
}

fn diurnal(profile: &SynthProfile, epochs_per_day: f64, t: usize) -> f64 {
    let phase = t as f64 / epochs_per_day + profile.diurnal_phase;
    profile.base + profile.diurnal_amplitude * (std::f64::consts::TAU * phase).sin()
}

/// Value of the synthetic channel at `epoch` for a given signal seed.
pub fn synth_signal(profile: &SynthProfile, epochs_per_day: f64, epoch: usize, seed: u64) -> f64 {
    SyntheticSignal::generate(profile, epochs_per_day, seed, epoch + 1).values[epoch]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceParams {
    /// Noise standard deviation at η = 1, as a fraction of range.
    pub noise_scale: f64,
    /// Probability of losing a sample at η = 1.
    pub drop_probability: f64,
}

/// Apply interference given pre-drawn randomness: `z ~ N(0,1)` for the
/// additive noise and `u ~ U[0,1)` for the loss decision. `None` means the
/// sample was lost.
pub fn perturb(value: f64, eta: f64, range: f64, params: InterferenceParams, z: f64, u: f64) -> Option<f64> {
    if u < eta * params.drop_probability {
        None
    } else {
        Some(value + eta * params.noise_scale * range * z)
    }
}

/// Corrupt one measurement at interference level `eta`.
pub fn inject_interference<R: Rng + ?Sized>(value: f64, eta: f64, range: f64, params: InterferenceParams, rng: &mut R) -> Option<f64> {
    let z: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    perturb(value, eta, range, params, z, u)
}
