//! Trace-replay signal source built from an aligned ingest.

use std::path::Path;

use super::config::{ChannelKind, ReplayConfig};
use super::EnvError;
use crate::ingest::{gap_fill, load_trace, AlignedSeries, GapPolicy};

/// Gap-filled per-sensor series and the episode windows they share.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayData {
    /// One full-length series per sensor.
    pub series: Vec<Vec<f64>>,
    /// Start slots of eligible episode windows, ascending.
    pub windows: Vec<usize>,
    pub epochs_per_day: f64,
    /// Day phase of slot 0, in slots.
    pub origin_phase: f64,
}

impl ReplayData {
    pub fn from_aligned(
        aligned: &AlignedSeries,
        sensors: &[ChannelKind],
        motes: &[u32],
        epochs: usize,
        gap: GapPolicy,
        slot_range: Option<[usize; 2]>,
    ) -> Result<Self, EnvError> {
        if sensors.len() != motes.len() {
            return Err(EnvError::Config(format!("{} sensors but {} motes", sensors.len(), motes.len())));
        }
        let mut series = Vec::with_capacity(sensors.len());
        let mut windows: Option<Vec<usize>> = None;
        for (&kind, &mote) in sensors.iter().zip(motes) {
            let m = aligned
                .motes
                .get(&mote)
                .ok_or_else(|| EnvError::Config(format!("mote {mote} not present in trace")))?;
            let filled = gap_fill(m.channel(kind), &m.present, gap, epochs)?;
            windows = Some(match windows {
                None => filled.windows.clone(),
                Some(w) => w.into_iter().filter(|s| filled.windows.binary_search(s).is_ok()).collect(),
            });
            series.push(filled.values);
        }
        let [lo, hi] = slot_range.unwrap_or([0, usize::MAX]);
        let windows: Vec<usize> = windows
            .unwrap_or_default()
            .into_iter()
            .filter(|&s| s >= lo && s.saturating_add(epochs) <= hi)
            .collect();
        if windows.is_empty() {
            return Err(EnvError::Config("trace has no eligible episode window".into()));
        }
        Ok(Self { series, windows, epochs_per_day: aligned.slots_per_day(), origin_phase: aligned.origin_phase() })
    }

    /// Load the trace named by `config`, resolving relative paths against `base_dir`.
    pub fn load(config: &ReplayConfig, sensors: &[ChannelKind], epochs: usize, base_dir: Option<&Path>) -> Result<Self, EnvError> {
        let path = match base_dir {
            Some(dir) if config.trace.is_relative() => dir.join(&config.trace),
            _ => config.trace.clone(),
        };
        let (aligned, _) = load_trace(&path, &config.cleaning)?;
        Self::from_aligned(&aligned, sensors, &config.motes, epochs, config.gap, config.slot_range)
    }
}
