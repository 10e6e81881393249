// SPDX-License-Identifier: Apache-2.0

//! Pre-flight characterization of a recording.
//!
//! Bursts are maximal runs of detection bins in which at least a given
//! fraction of channels is active. The remaining metrics follow common
//! reservoir-quality proxies: avalanche branching ratio, kernel and
//! generalization rank (effective rank of rate or response matrices),
//! spectral radius of a ridge-fitted VAR(1) map, and mean pairwise transfer
//! entropy of binarized spike trains.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use rand::Rng as _;

use crate::encoding::{encode_pattern, PatternSpec, PatternWindow, StimulusProgram};
use crate::error::{Error, Result};
use crate::linalg;
use crate::seed;
use crate::substrate::{bin_rates, ActivityType, FiringRateMatrix, Reservoir, SpikeTrainSet};

pub const BURST_BIN_MS: f64 = 10.0;
pub const BURST_THRESHOLD_FRACTION: f64 = 0.25;
pub const AVALANCHE_BIN_MS: f64 = 1.0;
pub const TE_BIN_MS: f64 = 10.0;
pub const RATE_BIN_MS: f64 = 100.0;
/// Below this many bursts per five minutes a recording has no coherent bursting.
pub const COHERENCE_FLOOR_PER_5MIN: f64 = 5.0;
pub const TYPE_D_MAX_INTERBURST_FRACTION: f64 = 0.05;
pub const BURST_RATE_SPLIT_HZ: f64 = 0.5;
pub const MIN_RECORDING_S: f64 = 300.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BurstEvents {
    pub onsets_ms: Vec<f64>,
    pub offsets_ms: Vec<f64>,
    pub spike_counts: Vec<usize>,
}

impl BurstEvents {
    pub fn len(&self) -> usize {
        self.onsets_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsets_ms.is_empty()
    }

    fn contains(&self, t: f64) -> bool {
        let i = self.onsets_ms.partition_point(|&o| o <= t);
        i > 0 && t < self.offsets_ms[i - 1]
    }

    /// Bursts restricted to `[start, end)`, re-timed to start at zero.
    pub fn slice(&self, start_ms: f64, end_ms: f64) -> BurstEvents {
        let mut out = BurstEvents::default();
        for i in 0..self.len() {
            if self.onsets_ms[i] >= start_ms && self.onsets_ms[i] < end_ms {
                out.onsets_ms.push(self.onsets_ms[i] - start_ms);
                out.offsets_ms.push(self.offsets_ms[i].min(end_ms) - start_ms);
                out.spike_counts.push(self.spike_counts[i]);
            }
        }
        out
    }
}

/// Population bursts: maximal runs of bins with at least `threshold_fraction` of channels active.
pub fn detect_bursts(spikes: &SpikeTrainSet, bin_width_ms: f64, threshold_fraction: f64) -> Result<BurstEvents> {
    if !(bin_width_ms > 0.0 && bin_width_ms.is_finite()) {
        return Err(Error::invalid("bin width", "must be positive"));
    }
    if !(0.0..=1.0).contains(&threshold_fraction) {
        return Err(Error::invalid("threshold fraction", "must lie in [0, 1]"));
    }
    let bins = libm::ceil(spikes.duration_ms() / bin_width_ms) as usize;
    let mut active = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    for train in spikes.channels() {
        let mut last = usize::MAX;
        for &t in train {
            let k = ((t / bin_width_ms) as usize).min(bins.saturating_sub(1));
            counts[k] += 1;
            if k != last {
                active[k] += 1;
                last = k;
            }
        }
    }
    let needed = threshold_fraction * spikes.channel_count() as f64;
    let mut events = BurstEvents::default();
    let mut k = 0;
    while k < bins {
        if spikes.channel_count() == 0 || (active[k] as f64) < needed || active[k] == 0 {
            k += 1;
            continue;
        }
        let start = k;
        let mut n = 0;
        while k < bins && (active[k] as f64) >= needed && active[k] > 0 {
            n += counts[k];
            k += 1;
        }
        events.onsets_ms.push(start as f64 * bin_width_ms);
        events
            .offsets_ms
            .push((k as f64 * bin_width_ms).min(spikes.duration_ms()));
        events.spike_counts.push(n);
    }
    Ok(events)
}

/// Fraction of all spikes that fall outside detected bursts.
pub fn interburst_fraction(spikes: &SpikeTrainSet, bursts: &BurstEvents) -> f64 {
    let total = spikes.total_spikes();
    if total == 0 {
        return 0.0;
    }
    let outside = spikes
        .channels()
        .iter()
        .flatten()
        .filter(|&&t| !bursts.contains(t))
        .count();
    outside as f64 / total as f64
}

/// Population spike count per bin over the whole record.
pub fn population_counts(spikes: &SpikeTrainSet, bin_width_ms: f64) -> Result<Vec<u32>> {
    if !(bin_width_ms > 0.0 && bin_width_ms.is_finite()) {
        return Err(Error::invalid("bin width", "must be positive"));
    }
    let bins = libm::ceil(spikes.duration_ms() / bin_width_ms) as usize;
    let mut counts = vec![0u32; bins];
    for &t in spikes.channels().iter().flatten() {
        counts[((t / bin_width_ms) as usize).min(bins - 1)] += 1;
    }
    Ok(counts)
}

/// Branching ratio of population-count segments.
///
/// Every bin with a nonzero count that has a successor inside its segment is
/// an ancestor bin; its ratio is successor count over its own count, so the
/// empty bin closing an avalanche contributes a zero. The last bin of a
/// segment has no successor and contributes nothing.
pub fn branching_ratio_segments<'a, I>(segments: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for seg in segments {
        for w in seg.windows(2) {
            if w[0] > 0 {
                sum += f64::from(w[1]) / f64::from(w[0]);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::NotComputable("branching ratio"));
    }
    Ok(sum / pairs as f64)
}

/// Avalanche branching ratio of a recording binned at `bin_width_ms`.
pub fn branching_ratio(spikes: &SpikeTrainSet, bin_width_ms: f64) -> Result<f64> {
    let counts = population_counts(spikes, bin_width_ms)?;
    branching_ratio_segments([counts.as_slice()])
}

/// Count of singular values above `tolerance` times the largest.
pub fn kernel_rank(rates: &FiringRateMatrix, tolerance: f64) -> Result<usize> {
    if rates.bin_count() < 2 {
        return Err(Error::invalid("rate matrix", "kernel rank needs at least 2 bins"));
    }
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::invalid("tolerance", "must lie in (0, 1)"));
    }
    Ok(linalg::effective_rank(&rates.values, tolerance))
}

/// Effective rank of a response matrix (one column per presentation).
pub fn response_rank(responses: &DMatrix<f64>, tolerance: f64) -> usize {
    linalg::effective_rank(responses, tolerance)
}

/// Presents `repeats` jittered copies of `probe` and returns the responses (channels × repeats).
///
/// Each pulse onset is shifted by an independent integer offset drawn
/// uniformly from `[-jitter_ms, jitter_ms]`. Presentations are separated by
/// `gap_ms` of silence so that the substrate relaxes between them. The
/// response is the rate vector of the bin that starts where the active
/// window ends.
pub fn jittered_probe_responses(
    reservoir: &dyn Reservoir,
    probe: &PatternSpec,
    jitter_ms: u32,
    repeats: usize,
    gap_ms: u64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if repeats < 2 {
        return Err(Error::invalid("generalization rank", "needs at least 2 repeats"));
    }
    let base = encode_pattern(probe, 0, crate::encoding::DEFAULT_INTENSITY)?;
    let window = u64::from(probe.window_ms());
    let stride = window + gap_ms;
    let mut rng = seed::rng(seed);
    let mut program = StimulusProgram::silent(gap_ms + repeats as u64 * stride);
    program.anchor_ms = gap_ms;
    for r in 0..repeats as u64 {
        let onset = gap_ms + r * stride;
        let mut prev_end = onset;
        for p in &base {
            let j = if jitter_ms == 0 {
                0
            } else {
                rng.random_range(-(jitter_ms as i64)..=jitter_ms as i64)
            };
            let lo = prev_end as i64;
            let hi = (onset + u64::from(probe.active_window_ms) - u64::from(p.duration_ms)) as i64;
            let t = ((onset + p.onset_ms) as i64 + j).clamp(lo, hi.max(lo)) as u64;
            let mut pulse = *p;
            pulse.onset_ms = t;
            prev_end = pulse.end_ms();
            program.events.push(pulse);
        }
        program.windows.push(PatternWindow {
            onset_ms: onset,
            active_ms: probe.active_window_ms,
            length_ms: probe.window_ms(),
            label: probe.label,
        });
    }
    let spikes = reservoir.stimulate(&program, program.span_ms)?;
    let rates = bin_rates(&spikes, RATE_BIN_MS, 0.0)?;
    let mut out = DMatrix::zeros(spikes.channel_count(), repeats);
    for (r, w) in program.windows.iter().enumerate() {
        if let Some(k) = rates.bin_at((w.onset_ms + u64::from(w.active_ms)) as f64) {
            out.set_column(r, &rates.values.column(k));
        }
    }
    Ok(out)
}

/// Effective rank of responses to jittered copies of one pattern; low means good generalization.
pub fn generalization_rank(
    reservoir: &dyn Reservoir,
    probe: &PatternSpec,
    jitter_ms: u32,
    repeats: usize,
    tolerance: f64,
    seed: u64,
) -> Result<usize> {
    let responses = jittered_probe_responses(reservoir, probe, jitter_ms, repeats, 4000, seed)?;
    Ok(response_rank(&responses, tolerance))
}

/// Largest eigenvalue modulus of the ridge-fitted map x(t+1) ≈ A x(t) on centered rates.
pub fn spectral_radius(rates: &FiringRateMatrix) -> Result<f64> {
    let n = rates.channel_count();
    let t = rates.bin_count();
    if t < 2 || n == 0 {
        return Err(Error::invalid("rate matrix", "spectral radius needs at least 2 bins"));
    }
    let mut x = rates.values.clone();
    for mut row in x.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let past = x.columns(0, t - 1);
    let future = x.columns(1, t - 1);
    let mut gram = past * past.transpose();
    let trace = gram.trace();
    if !(trace > 0.0) {
        return Ok(0.0);
    }
    let lambda = 1e-3 * trace / n as f64;
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let cross = past * future.transpose();
    // A^T = gram^{-1} (X_past X_future^T); the spectrum is transpose-invariant.
    let a_t = linalg::solve_spd(gram, &cross)?;
    Ok(linalg::spectral_radius(&a_t))
}

/// Binary occupancy of each channel per bin.
fn occupancy(spikes: &SpikeTrainSet, bin_width_ms: f64) -> Vec<Vec<u8>> {
    let bins = libm::floor(spikes.duration_ms() / bin_width_ms) as usize;
    spikes
        .channels()
        .iter()
        .map(|train| {
            let mut occ = vec![0u8; bins];
            for &t in train {
                let k = (t / bin_width_ms) as usize;
                if k < bins {
                    occ[k] = 1;
                }
            }
            occ
        })
        .collect()
}

fn history_codes(x: &[u8], history: usize) -> Vec<usize> {
    (history..x.len())
        .map(|t| x[t - history..t].iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b)))
        .collect()
}

fn plogp_sum(counts: &[u32], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = f64::from(c) / total;
            p * libm::log2(p)
        })
        .sum()
}

/// Plug-in transfer entropy (bits) from `source` to `target` binary series.
pub fn transfer_entropy_binary(source: &[u8], target: &[u8], history: usize) -> Result<f64> {
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch {
            what: "transfer entropy series",
            expected: target.len(),
            found: source.len(),
        });
    }
    if history == 0 || history > 16 {
        return Err(Error::invalid("history", "must lie in 1..=16"));
    }
    if target.len() <= history + 1 {
        return Err(Error::invalid("transfer entropy", "record too short for the requested history"));
    }
    let s = history_codes(source, history);
    let d = history_codes(target, history);
    te_from_codes(&s, &d, &target[history..], history)
}

fn te_from_codes(src: &[usize], dst_past: &[usize], dst_next: &[u8], history: usize) -> Result<f64> {
    let states = 1usize << history;
    let mut joint = vec![0u32; 2 * states * states];
    for t in 0..dst_next.len() {
        joint[(usize::from(dst_next[t]) * states + dst_past[t]) * states + src[t]] += 1;
    }
    let total = dst_next.len() as f64;
    // TE = H(Y+,Y-) - H(Y-) - H(Y+,Y-,X-) + H(Y-,X-)
    let mut next_past = vec![0u32; 2 * states];
    let mut past = vec![0u32; states];
    let mut past_src = vec![0u32; states * states];
    for nx in 0..2 {
        for yp in 0..states {
            for xp in 0..states {
                let c = joint[(nx * states + yp) * states + xp];
                next_past[nx * states + yp] += c;
                past[yp] += c;
                past_src[yp * states + xp] += c;
            }
        }
    }
    let te = -plogp_sum(&next_past, total) + plogp_sum(&past, total) + plogp_sum(&joint, total)
        - plogp_sum(&past_src, total);
    Ok(te.max(0.0))
}

/// Mean plug-in transfer entropy over all ordered channel pairs.
pub fn mean_transfer_entropy(spikes: &SpikeTrainSet, bin_width_ms: f64, history: usize) -> Result<f64> {
    if spikes.channel_count() < 2 {
        return Err(Error::invalid("transfer entropy", "needs at least 2 channels"));
    }
    if !(bin_width_ms > 0.0 && bin_width_ms.is_finite()) {
        return Err(Error::invalid("bin width", "must be positive"));
    }
    if history == 0 || history > 16 {
        return Err(Error::invalid("history", "must lie in 1..=16"));
    }
    let occ = occupancy(spikes, bin_width_ms);
    let bins = occ[0].len();
    if bins <= history + 1 {
        return Err(Error::invalid("transfer entropy", "record too short for the requested history"));
    }
    let codes: Vec<Vec<usize>> = occ.iter().map(|o| history_codes(o, history)).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for j in 0..occ.len() {
        for i in 0..occ.len() {
            if i != j {
                sum += te_from_codes(&codes[i], &codes[j], &occ[j][history..], history)?;
                pairs += 1;
            }
        }
    }
    Ok(sum / pairs as f64)
}

/// Burst statistics that decide the activity class.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorization {
    pub type_label: ActivityType,
    pub burst_count: usize,
    pub burst_rate_hz: f64,
    pub interburst_fraction: f64,
}

/// Assigns the activity class of a spontaneous recording of at least five minutes.
pub fn categorize(spikes: &SpikeTrainSet) -> Result<Categorization> {
    let duration_s = spikes.duration_ms() / 1000.0;
    if duration_s < MIN_RECORDING_S {
        return Err(Error::invalid("recording", "categorization needs at least 300 s"));
    }
    let bursts = detect_bursts(spikes, BURST_BIN_MS, BURST_THRESHOLD_FRACTION)?;
    Ok(categorize_bursts(spikes, &bursts))
}

fn categorize_bursts(spikes: &SpikeTrainSet, bursts: &BurstEvents) -> Categorization {
    let duration_s = spikes.duration_ms() / 1000.0;
    let rate = bursts.len() as f64 / duration_s;
    let interburst = interburst_fraction(spikes, bursts);
    let floor = COHERENCE_FLOOR_PER_5MIN / MIN_RECORDING_S;
    let type_label = if rate < floor {
        ActivityType::A
    } else if interburst < TYPE_D_MAX_INTERBURST_FRACTION {
        ActivityType::D
    } else if rate < BURST_RATE_SPLIT_HZ {
        ActivityType::B
    } else {
        ActivityType::C
    };
    Categorization {
        type_label,
        burst_count: bursts.len(),
        burst_rate_hz: rate,
        interburst_fraction: interburst,
    }
}

/// Tunables for a full pre-flight report.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub rank_tolerance: f64,
    pub te_history: usize,
    pub probe_label: u8,
    pub probe_jitter_ms: u32,
    pub probe_repeats: usize,
    pub seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            rank_tolerance: 0.01,
            te_history: 1,
            probe_label: 5,
            probe_jitter_ms: 5,
            probe_repeats: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub type_label: ActivityType,
    pub burst_count: usize,
    pub burst_rate_hz: f64,
    pub interburst_fraction: f64,
    /// Absent for Type A (no coherent bursts) or when no avalanche exists.
    pub branching_ratio: Option<f64>,
    pub kernel_rank: usize,
    /// Needs a stimulable substrate; absent for recordings read from disk.
    pub generalization_rank: Option<usize>,
    pub spectral_radius: f64,
    pub mean_transfer_entropy_bits: f64,
    pub recording_duration_s: f64,
}

/// Full pre-flight report for a spontaneous recording.
pub fn diagnose(
    spikes: &SpikeTrainSet,
    reservoir: Option<&dyn Reservoir>,
    config: &DiagnosticsConfig,
) -> Result<DiagnosticsReport> {
    let cat = categorize(spikes)?;
    let branching = if cat.type_label == ActivityType::A {
        None
    } else {
        match branching_ratio(spikes, AVALANCHE_BIN_MS) {
            Ok(s) => Some(s),
            Err(Error::NotComputable(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let rates = bin_rates(spikes, RATE_BIN_MS, 0.0)?;
    let kernel = kernel_rank(&rates, config.rank_tolerance)?;
    let generalization = match reservoir {
        Some(r) => {
            let probe = PatternSpec::new(config.probe_label)?;
            let g = generalization_rank(
                r,
                &probe,
                config.probe_jitter_ms,
                config.probe_repeats,
                config.rank_tolerance,
                config.seed,
            )?;
            Some(g)
        }
        None => None,
    };
    Ok(DiagnosticsReport {
        type_label: cat.type_label,
        burst_count: cat.burst_count,
        burst_rate_hz: cat.burst_rate_hz,
        interburst_fraction: cat.interburst_fraction,
        branching_ratio: branching,
        kernel_rank: kernel,
        generalization_rank: generalization,
        spectral_radius: spectral_radius(&rates)?,
        mean_transfer_entropy_bits: mean_transfer_entropy(spikes, TE_BIN_MS, config.te_history)?,
        recording_duration_s: spikes.duration_ms() / 1000.0,
    })
}
