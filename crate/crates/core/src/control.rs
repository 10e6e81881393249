// SPDX-License-Identifier: Apache-2.0

//! Chaos-control scheduling and burst entrainment statistics.

use alloc::vec::Vec;

use crate::diagnostics::BurstEvents;
use crate::encoding::{ModulationSpec, StimulusProgram};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_TOLERANCE_MS: f64 = 50.0;

/// Attaches `spec` as the program's background modulation.
///
/// A disabled spec leaves the program untouched. Pattern events, windows and
/// the phase anchor are never modified, so applying the same spec twice is a
/// no-op.
pub fn apply_control(program: &StimulusProgram, spec: &ModulationSpec) -> Result<StimulusProgram> {
    spec.validate()?;
    let mut out = program.clone();
    if spec.enabled {
        out.modulation = *spec;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntrainmentReport {
    /// Sample variance of consecutive onset intervals (ms²).
    pub burst_interval_variance: f64,
    pub burst_interval_sd: f64,
    /// 1 − |mean resultant| of onset phases relative to the modulation cycle.
    pub onset_phase_circular_variance: f64,
    /// Share of bursts starting within `window_tolerance_ms` of a window onset.
    pub aligned_fraction: f64,
    pub window_tolerance_ms: f64,
    pub burst_count: usize,
}

/// Burst timing relative to the program's pattern windows and modulation cycle.
///
/// Phases are taken against the modulation period (anchored at the program
/// anchor) whether or not the modulation is enabled, so paired runs with and
/// without control are measured on the same clock. Without windows, onsets
/// are aligned against the cycle grid instead.
pub fn entrainment_metrics(bursts: &BurstEvents, program: &StimulusProgram) -> Result<EntrainmentReport> {
    entrainment_metrics_with(bursts, program, DEFAULT_WINDOW_TOLERANCE_MS)
}

pub fn entrainment_metrics_with(
    bursts: &BurstEvents,
    program: &StimulusProgram,
    window_tolerance_ms: f64,
) -> Result<EntrainmentReport> {
    let onsets = &bursts.onsets_ms;
    if onsets.len() < 2 {
        return Err(Error::invalid("entrainment", "needs at least two bursts"));
    }
    if !(window_tolerance_ms >= 0.0) {
        return Err(Error::invalid("entrainment", "tolerance must be nonnegative"));
    }
    let period = program.modulation.period_ms();
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::invalid("entrainment", "modulation period must be positive"));
    }

    let intervals: Vec<f64> = onsets.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
    let variance = if intervals.len() > 1 {
        intervals.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (intervals.len() - 1) as f64
    } else {
        0.0
    };

    let anchor = program.anchor_ms as f64;
    let (mut c, mut s) = (0.0, 0.0);
    for &t in onsets {
        let r = libm::fmod(t - anchor, period);
        let r = if r < 0.0 { r + period } else { r };
        let angle = 2.0 * core::f64::consts::PI * r / period;
        c += libm::cos(angle);
        s += libm::sin(angle);
    }
    let n = onsets.len() as f64;
    let resultant = libm::hypot(c, s) / n;

    let window_onsets: Vec<f64> = program.windows.iter().map(|w| w.onset_ms as f64).collect();
    let aligned = onsets
        .iter()
        .filter(|&&t| {
            let distance = if window_onsets.is_empty() {
                let r = libm::fmod(t - anchor, period);
                let r = if r < 0.0 { r + period } else { r };
                r.min(period - r)
            } else {
                nearest_distance(&window_onsets, t)
            };
            distance <= window_tolerance_ms
        })
        .count();

    Ok(EntrainmentReport {
        burst_interval_variance: variance,
        burst_interval_sd: libm::sqrt(variance),
        onset_phase_circular_variance: (1.0 - resultant).clamp(0.0, 1.0),
        aligned_fraction: aligned as f64 / n,
        window_tolerance_ms,
        burst_count: onsets.len(),
    })
}

fn nearest_distance(sorted: &[f64], t: f64) -> f64 {
    let i = sorted.partition_point(|&x| x < t);
    let mut best = f64::INFINITY;
    if i < sorted.len() {
        best = best.min(sorted[i] - t);
    }
    if i > 0 {
        best = best.min(t - sorted[i - 1]);
    }
    best
}
