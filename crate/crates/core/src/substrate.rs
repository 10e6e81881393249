// SPDX-License-Identifier: Apache-2.0

//! Surrogate living reservoir.
//!
//! A seeded network of leaky integrate-and-fire neurons with spike-frequency
//! adaptation and Tsodyks-Markram short-term depression on excitatory
//! synapses, integrated with a fixed 1 ms Euler step. Neuron `i` is picked
//! up by electrode `i mod channel_count`. Light drives every neuron through
//! a per-neuron sensitivity; a slow drift process erodes light and synaptic
//! efficacy and shifts excitability over simulated hours.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use crate::encoding::StimulusProgram;
use crate::error::{Error, Result};
use crate::seed;

pub const STEP_MS: f64 = 1.0;
const THRESHOLD: f64 = 1.0;
const REFRACTORY_STEPS: u32 = 2;
const MS_PER_HOUR: f64 = 3_600_000.0;

/// Short-term depression parameters of excitatory synapses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Depression {
    /// Fraction of available resources released per spike.
    pub utilization: f64,
    pub recovery_ms: f64,
}

/// Spike-triggered adaptation current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adaptation {
    pub increment: f64,
    /// Median time constant; per-neuron values are spread log-uniformly over a factor of four.
    pub time_constant_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstrateConfig {
    pub neuron_count: usize,
    pub channel_count: usize,
    pub connection_probability: f64,
    /// Total recurrent drive (threshold units) a neuron receives if every
    /// excitatory presynaptic partner fires once with full resources.
    pub synaptic_weight_scale: f64,
    pub depression: Depression,
    pub adaptation: Adaptation,
    pub inhibitory_fraction: f64,
    /// Inhibitory weight relative to excitatory weight.
    pub inhibitory_ratio: f64,
    pub membrane_time_constant_ms: f64,
    /// Mean constant input current, in threshold units.
    pub excitability_bias: f64,
    /// Half-width of the uniform spread of per-neuron bias around the mean.
    pub bias_spread: f64,
    pub noise_rate_hz: f64,
    /// Voltage kick of one background noise event.
    pub noise_amplitude: f64,
    /// Current per unit optical intensity for a neuron of unit sensitivity.
    pub light_gain: f64,
    /// Fraction of neurons inside the patterned illumination field. The
    /// background modulation is whole-field and reaches every neuron.
    pub stimulated_fraction: f64,
    pub seed: u64,
}

impl Default for SubstrateConfig {
    fn default() -> Self {
        SubstrateConfig {
            neuron_count: 512,
            channel_count: 128,
            connection_probability: 0.1,
            synaptic_weight_scale: 0.0,
            depression: Depression {
                utilization: 0.3,
                recovery_ms: 800.0,
            },
            adaptation: Adaptation {
                increment: 0.0,
                time_constant_ms: 400.0,
            },
            inhibitory_fraction: 0.0,
            inhibitory_ratio: 1.0,
            membrane_time_constant_ms: 20.0,
            excitability_bias: 0.0,
            bias_spread: 0.0,
            noise_rate_hz: 0.0,
            noise_amplitude: 0.0,
            light_gain: 0.0,
            stimulated_fraction: 1.0,
            seed: 0,
        }
    }
}

fn finite_nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl SubstrateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_count == 0 || self.neuron_count < self.channel_count {
            return Err(Error::invalid("substrate", "need neuron_count >= channel_count > 0"));
        }
        if !(self.connection_probability > 0.0 && self.connection_probability < 1.0) {
            return Err(Error::invalid("substrate", "connection probability must lie in (0, 1)"));
        }
        if !(self.depression.utilization > 0.0 && self.depression.utilization <= 1.0) {
            return Err(Error::invalid("substrate", "depression utilization must lie in (0, 1]"));
        }
        let positive = [
            self.depression.recovery_ms,
            self.adaptation.time_constant_ms,
            self.membrane_time_constant_ms,
        ];
        if positive.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::invalid("substrate", "time constants must be positive and finite"));
        }
        let nonneg = [
            self.synaptic_weight_scale,
            self.adaptation.increment,
            self.inhibitory_ratio,
            self.bias_spread,
            self.noise_rate_hz,
            self.noise_amplitude,
            self.light_gain,
        ];
        if nonneg.iter().any(|x| !finite_nonneg(*x)) || !self.excitability_bias.is_finite() {
            return Err(Error::invalid("substrate", "parameters must be finite and nonnegative"));
        }
        if !(self.stimulated_fraction > 0.0 && self.stimulated_fraction <= 1.0) {
            return Err(Error::invalid("substrate", "stimulated fraction must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.inhibitory_fraction) {
            return Err(Error::invalid("substrate", "inhibitory fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn channel_of(&self, neuron: usize) -> usize {
        neuron % self.channel_count
    }
}

/// Activity classes of spontaneous cultures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivityType {
    /// Incoherent, Poisson-like.
    A,
    /// Slow bursting (< 0.5 Hz) with interburst spikes.
    B,
    /// Fast bursting (>= 0.5 Hz) with interburst spikes.
    C,
    /// Regular bursts with minimal interburst spiking.
    D,
}

impl ActivityType {
    pub const ALL: [ActivityType; 4] = [ActivityType::A, ActivityType::B, ActivityType::C, ActivityType::D];

    pub fn as_char(self) -> char {
        match self {
            ActivityType::A => 'A',
            ActivityType::B => 'B',
            ActivityType::C => 'C',
            ActivityType::D => 'D',
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(ActivityType::A),
            "B" | "b" => Ok(ActivityType::B),
            "C" | "c" => Ok(ActivityType::C),
            "D" | "d" => Ok(ActivityType::D),
            _ => Err(Error::invalid("activity type", "expected one of A, B, C, D")),
        }
    }
}

impl core::fmt::Display for ActivityType {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Frozen configuration whose spontaneous activity falls in the given class.
pub fn preset(kind: ActivityType) -> SubstrateConfig {
    let base = SubstrateConfig {
        seed: 0x5eed_0000 + kind as u64,
        ..SubstrateConfig::default()
    };
    match kind {
        ActivityType::A => SubstrateConfig {
            synaptic_weight_scale: 0.05,
            excitability_bias: 0.96,
            bias_spread: 0.15,
            adaptation: Adaptation {
                increment: 0.1,
                time_constant_ms: 300.0,
            },
            light_gain: 0.63,
            stimulated_fraction: 0.72,
            ..base
        },
        ActivityType::B => SubstrateConfig {
            synaptic_weight_scale: 0.527,
            depression: Depression {
                utilization: 0.28,
                recovery_ms: 2500.0,
            },
            excitability_bias: 0.89,
            bias_spread: 0.1,
            noise_rate_hz: 20.0,
            noise_amplitude: 0.1,
            adaptation: Adaptation {
                increment: 0.029,
                time_constant_ms: 429.0,
            },
            light_gain: 0.63,
            stimulated_fraction: 0.72,
            ..base
        },
        ActivityType::C => SubstrateConfig {
            synaptic_weight_scale: 0.527,
            depression: Depression {
                utilization: 0.28,
                recovery_ms: 724.0,
            },
            excitability_bias: 0.94,
            bias_spread: 0.1,
            adaptation: Adaptation {
                increment: 0.029,
                time_constant_ms: 429.0,
            },
            light_gain: 0.63,
            stimulated_fraction: 0.72,
            ..base
        },
        ActivityType::D => SubstrateConfig {
            synaptic_weight_scale: 2.0,
            depression: Depression {
                utilization: 0.28,
                recovery_ms: 724.0,
            },
            excitability_bias: 0.97,
            bias_spread: 0.05,
            adaptation: Adaptation {
                increment: 0.05,
                time_constant_ms: 400.0,
            },
            light_gain: 0.63,
            stimulated_fraction: 0.72,
            ..base
        },
    }
}

/// Slow loss of responsiveness over simulated hours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig {
    /// Exponential decay rate (per hour) of light and synaptic efficacy.
    pub efficacy_decay_rate: f64,
    /// Excitability lost per hour (subtracted from every neuron's bias).
    pub excitability_drift_rate: f64,
    /// After this many hours light no longer evokes any response.
    pub responsiveness_cutoff_h: f64,
    pub enabled: bool,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            efficacy_decay_rate: 0.0,
            excitability_drift_rate: 0.0,
            responsiveness_cutoff_h: 24.0,
            enabled: false,
        }
    }
}

impl DriftConfig {
    pub fn disabled() -> Self {
        DriftConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !finite_nonneg(self.efficacy_decay_rate) || !finite_nonneg(self.excitability_drift_rate) {
            return Err(Error::invalid("drift", "rates must be finite and nonnegative"));
        }
        if !(self.responsiveness_cutoff_h > 0.0) {
            return Err(Error::invalid("drift", "cutoff must be positive"));
        }
        Ok(())
    }

    /// The same drift observed on a clock running `factor` times faster.
    pub fn compressed(&self, factor: f64) -> Self {
        DriftConfig {
            efficacy_decay_rate: self.efficacy_decay_rate * factor,
            excitability_drift_rate: self.excitability_drift_rate * factor,
            responsiveness_cutoff_h: self.responsiveness_cutoff_h / factor,
            enabled: self.enabled,
        }
    }

    /// (light factor, synaptic factor, bias shift) at time `t_ms`.
    pub fn state_at(&self, t_ms: f64) -> (f64, f64, f64) {
        if !self.enabled {
            return (1.0, 1.0, 0.0);
        }
        let h = t_ms / MS_PER_HOUR;
        let efficacy = libm::exp(-self.efficacy_decay_rate * h);
        let light = if h >= self.responsiveness_cutoff_h { 0.0 } else { efficacy };
        (light, efficacy, -self.excitability_drift_rate * h)
    }
}

/// Per-channel spike timestamps (ms).
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrainSet {
    channel_count: usize,
    duration_ms: f64,
    spikes: Vec<Vec<f64>>,
}

impl SpikeTrainSet {
    /// Validates sortedness and range of every channel's train.
    pub fn new(duration_ms: f64, spikes: Vec<Vec<f64>>) -> Result<Self> {
        if !(duration_ms.is_finite() && duration_ms >= 0.0) {
            return Err(Error::invalid("spike trains", "duration must be finite and nonnegative"));
        }
        for train in &spikes {
            if train.iter().any(|t| !(t.is_finite() && *t >= 0.0 && *t < duration_ms)) {
                return Err(Error::invalid("spike trains", "timestamp outside [0, duration)"));
            }
            if train.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid("spike trains", "timestamps must be strictly increasing"));
            }
        }
        Ok(SpikeTrainSet {
            channel_count: spikes.len(),
            duration_ms,
            spikes,
        })
    }

    pub fn empty(channel_count: usize, duration_ms: f64) -> Self {
        SpikeTrainSet {
            channel_count,
            duration_ms,
            spikes: vec![Vec::new(); channel_count],
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration_ms
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.spikes[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.spikes
    }

    pub fn total_spikes(&self) -> usize {
        self.spikes.iter().map(Vec::len).sum()
    }

    /// Channel `c` of the result is channel `perm[c]` of `self`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.channel_count {
            return Err(Error::DimensionMismatch {
                what: "channel permutation",
                expected: self.channel_count,
                found: perm.len(),
            });
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || core::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("channel permutation", "not a permutation"));
            }
        }
        Ok(SpikeTrainSet {
            channel_count: self.channel_count,
            duration_ms: self.duration_ms,
            spikes: perm.iter().map(|&p| self.spikes[p].clone()).collect(),
        })
    }

    /// Restriction to `[start, end)`, re-timed so that `start` becomes zero.
    pub fn slice(&self, start_ms: f64, end_ms: f64) -> Self {
        let end = end_ms.min(self.duration_ms);
        let start = start_ms.max(0.0).min(end);
        SpikeTrainSet {
            channel_count: self.channel_count,
            duration_ms: end - start,
            spikes: self
                .spikes
                .iter()
                .map(|tr| {
                    let lo = tr.partition_point(|&t| t < start);
                    let hi = tr.partition_point(|&t| t < end);
                    tr[lo..hi].iter().map(|t| t - start).collect()
                })
                .collect(),
        }
    }
}

/// Channels × bins firing rates in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringRateMatrix {
    pub bin_width_ms: f64,
    pub t0_ms: f64,
    pub values: nalgebra::DMatrix<f64>,
}

impl FiringRateMatrix {
    pub fn channel_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn bin_count(&self) -> usize {
        self.values.ncols()
    }

    /// Index of the bin containing `t_ms`, if any.
    pub fn bin_at(&self, t_ms: f64) -> Option<usize> {
        let k = libm::floor((t_ms - self.t0_ms) / self.bin_width_ms);
        (k >= 0.0 && (k as usize) < self.bin_count()).then_some(k as usize)
    }
}

/// Counts spikes per `bin_width_ms` bin starting at `t0_ms` and converts to Hz.
pub fn bin_rates(spikes: &SpikeTrainSet, bin_width_ms: f64, t0_ms: f64) -> Result<FiringRateMatrix> {
    if !(bin_width_ms > 0.0 && bin_width_ms.is_finite()) || !t0_ms.is_finite() {
        return Err(Error::invalid("bin width", "must be positive and finite"));
    }
    let bins = if t0_ms >= spikes.duration_ms {
        0
    } else {
        libm::floor((spikes.duration_ms - t0_ms) / bin_width_ms) as usize
    };
    let mut values = nalgebra::DMatrix::zeros(spikes.channel_count, bins);
    let end = t0_ms + bins as f64 * bin_width_ms;
    let scale = 1000.0 / bin_width_ms;
    for (c, train) in spikes.spikes.iter().enumerate() {
        for &t in train {
            if t < t0_ms || t >= end {
                continue;
            }
            let k = (libm::floor((t - t0_ms) / bin_width_ms) as usize).min(bins - 1);
            values[(c, k)] += scale;
        }
    }
    Ok(FiringRateMatrix {
        bin_width_ms,
        t0_ms,
        values,
    })
}

/// Anything that can be stimulated with a program and recorded from.
pub trait Reservoir {
    fn channel_count(&self) -> usize;
    fn stimulate(&self, program: &StimulusProgram, duration_ms: u64) -> Result<SpikeTrainSet>;
}

/// A configured surrogate culture.
#[derive(Debug, Clone, PartialEq)]
pub struct Substrate {
    pub config: SubstrateConfig,
    pub drift: DriftConfig,
}

impl Substrate {
    pub fn new(config: SubstrateConfig, drift: DriftConfig) -> Result<Self> {
        config.validate()?;
        drift.validate()?;
        Ok(Substrate { config, drift })
    }
}

impl Reservoir for Substrate {
    fn channel_count(&self) -> usize {
        self.config.channel_count
    }

    fn stimulate(&self, program: &StimulusProgram, duration_ms: u64) -> Result<SpikeTrainSet> {
        simulate(&self.config, &self.drift, program, duration_ms)
    }
}

/// Static network: connectivity and per-neuron heterogeneity.
struct Network {
    excitatory: Vec<bool>,
    /// CSR outgoing adjacency.
    row_start: Vec<u32>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    sensitivity: Vec<f64>,
    /// Pattern-light sensitivity; zero outside the illuminated field.
    pattern_sensitivity: Vec<f64>,
    membrane_decay: Vec<f64>,
    adaptation_decay: Vec<f64>,
}

impl Network {
    fn build(cfg: &SubstrateConfig) -> Self {
        let n = cfg.neuron_count;
        let mut rng = seed::rng(seed::derive(cfg.seed, "network"));
        let n_inh = libm::round(cfg.inhibitory_fraction * n as f64) as usize;
        // Spread inhibitory cells across channels.
        let excitatory: Vec<bool> = (0..n).map(|i| (i * 7919 + 13) % n >= n_inh).collect();
        let n_exc = (n - n_inh).max(1);
        let w_exc = cfg.synaptic_weight_scale / (cfg.connection_probability * n_exc as f64);
        let mut row_start = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for pre in 0..n {
            row_start.push(targets.len() as u32);
            let sign = if excitatory[pre] { 1.0 } else { -cfg.inhibitory_ratio };
            for post in 0..n {
                if post != pre && rng.random::<f64>() < cfg.connection_probability {
                    targets.push(post as u32);
                    weights.push(sign * w_exc * (0.5 + rng.random::<f64>()));
                }
            }
        }
        row_start.push(targets.len() as u32);
        let mut bias = Vec::with_capacity(n);
        let mut sensitivity = Vec::with_capacity(n);
        let mut pattern_sensitivity = Vec::with_capacity(n);
        let mut membrane_decay = Vec::with_capacity(n);
        let mut adaptation_decay = Vec::with_capacity(n);
        for _ in 0..n {
            bias.push(cfg.excitability_bias + cfg.bias_spread * (2.0 * rng.random::<f64>() - 1.0));
            let u: f64 = rng.random();
            let sens = 0.2 + 1.6 * u * u;
            sensitivity.push(sens);
            let lit = rng.random::<f64>() < cfg.stimulated_fraction;
            pattern_sensitivity.push(if lit { sens } else { 0.0 });
            let tau_m = cfg.membrane_time_constant_ms * (0.5 + rng.random::<f64>());
            membrane_decay.push(STEP_MS / tau_m);
            let tau_a = cfg.adaptation.time_constant_ms * libm::exp2(2.0 * rng.random::<f64>() - 1.0);
            adaptation_decay.push(libm::exp(-STEP_MS / tau_a));
        }
        Network {
            excitatory,
            row_start,
            targets,
            weights,
            bias,
            sensitivity,
            pattern_sensitivity,
            membrane_decay,
            adaptation_decay,
        }
    }
}

const ADAPTATION_FLOOR: f64 = 1e-30;

/// Runs the network for `duration_ms` under `program`.
pub fn simulate(
    config: &SubstrateConfig,
    drift: &DriftConfig,
    program: &StimulusProgram,
    duration_ms: u64,
) -> Result<SpikeTrainSet> {
    config.validate()?;
    drift.validate()?;
    program.validate()?;
    if program.span_ms > duration_ms {
        return Err(Error::invalid("simulation", "program extends past the requested duration"));
    }
    let net = Network::build(config);
    let n = config.neuron_count;
    let mut rng = seed::rng(seed::derive(config.seed, "dynamics"));

    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 0.5).collect();
    let mut adapt = vec![0.0; n];
    let mut resources = vec![1.0; n];
    let mut refractory = vec![0u32; n];
    let mut input = vec![0.0; n];
    let mut next_input = vec![0.0; n];

    let noise_p = config.noise_rate_hz * STEP_MS / 1000.0;
    let draw_gap = |rng: &mut seed::Rng| -> u64 {
        // Geometric waiting time (in steps) for a per-step event probability `noise_p`.
        let u: f64 = 1.0 - rng.random::<f64>();
        1 + libm::floor(libm::log(u) / libm::log1p(-noise_p)) as u64
    };
    let noise_on = noise_p > 0.0 && config.noise_amplitude > 0.0 && noise_p < 1.0;
    let mut next_noise: Vec<u64> = if noise_on {
        (0..n).map(|_| draw_gap(&mut rng) - 1).collect()
    } else {
        vec![u64::MAX; n]
    };

    let recovery = STEP_MS / config.depression.recovery_ms;
    let u_release = config.depression.utilization;
    // Inhibitory cells never release resources, so recovery is a no-op for them.
    let recovery_of: Vec<f64> = net.excitatory.iter().map(|&e| if e { recovery } else { 0.0 }).collect();
    let mut candidate = vec![0.0; n];
    let mut spikes: Vec<Vec<f64>> = vec![Vec::new(); config.channel_count];
    let mut event_idx = 0usize;

    for step in 0..duration_ms {
        let t = step as f64;
        let (light_factor, syn_factor, bias_shift) = drift.state_at(t);

        while event_idx < program.events.len() && program.events[event_idx].end_ms() <= step {
            event_idx += 1;
        }
        let mut pattern = 0.0;
        if let Some(e) = program.events.get(event_idx) {
            if e.onset_ms <= step {
                pattern = e.intensity;
            }
        }
        let gain = config.light_gain * light_factor;
        let pattern_light = gain * pattern;
        let background_light = gain * program.modulation_at(t + 0.5 * STEP_MS);

        core::mem::swap(&mut input, &mut next_input);
        next_input.iter_mut().for_each(|x| *x = 0.0);

        if noise_on {
            for i in 0..n {
                if next_noise[i] == step {
                    input[i] += config.noise_amplitude;
                    next_noise[i] = step + draw_gap(&mut rng);
                }
            }
        }
        // Branch-free passes over all neurons; refractory cells discard `candidate`.
        for i in 0..n {
            let a = adapt[i] * net.adaptation_decay[i];
            // Flushing keeps long silences out of subnormal arithmetic; the
            // flushed amount is far below the resolution of `current`.
            adapt[i] = if a < ADAPTATION_FLOOR { 0.0 } else { a };
            resources[i] += (1.0 - resources[i]) * recovery_of[i];
            let before = v[i];
            let current = net.bias[i] + bias_shift + pattern_light * net.pattern_sensitivity[i]
                + background_light * net.sensitivity[i]
                - adapt[i];
            candidate[i] = before + (current - before) * net.membrane_decay[i] + input[i];
        }
        for i in 0..n {
            if refractory[i] > 0 {
                refractory[i] -= 1;
                continue;
            }
            let before = v[i];
            let after = candidate[i];
            if after < THRESHOLD {
                v[i] = after;
                continue;
            }
            let frac = ((THRESHOLD - before) / (after - before)).clamp(0.0, 0.999);
            spikes[config.channel_of(i)].push(t + frac * STEP_MS);
            v[i] = 0.0;
            refractory[i] = REFRACTORY_STEPS;
            adapt[i] += config.adaptation.increment;
            let released = if net.excitatory[i] {
                let r = u_release * resources[i];
                resources[i] -= r;
                r * syn_factor
            } else {
                syn_factor
            };
            let (lo, hi) = (net.row_start[i] as usize, net.row_start[i + 1] as usize);
            for k in lo..hi {
                next_input[net.targets[k] as usize] += net.weights[k] * released;
            }
        }
    }

    let duration = duration_ms as f64;
    for train in &mut spikes {
        train.sort_by(f64::total_cmp);
        train.dedup();
        train.retain(|&t| t < duration);
    }
    SpikeTrainSet::new(duration, spikes)
}
