// SPDX-License-Identifier: Apache-2.0

//! Frequency-encoded optical pattern programs.
//!
//! Pattern `N` is `N` equal-width light pulses spread uniformly over the
//! active window, followed by a rest window. Programs are sequences of such
//! labeled windows plus an optional triangular background modulation used
//! for chaos control.

use alloc::vec::Vec;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;

pub const PULSE_WIDTH_MS: u32 = 15;
pub const ACTIVE_WINDOW_MS: u32 = 900;
pub const REST_WINDOW_MS: u32 = 100;
pub const MAX_LABEL: u8 = 10;
/// Default pattern intensity; a dimensionless drive scaled by the substrate's light gain.
pub const DEFAULT_INTENSITY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternSpec {
    pub label: u8,
    pub pulse_width_ms: u32,
    pub active_window_ms: u32,
    pub rest_window_ms: u32,
}

impl PatternSpec {
    /// Pattern with the default 15 ms pulses in a 900 ms + 100 ms window.
    pub fn new(label: u8) -> Result<Self> {
        let spec = PatternSpec {
            label,
            pulse_width_ms: PULSE_WIDTH_MS,
            active_window_ms: ACTIVE_WINDOW_MS,
            rest_window_ms: REST_WINDOW_MS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn pulse_count(&self) -> u32 {
        u32::from(self.label)
    }

    pub fn window_ms(&self) -> u32 {
        self.active_window_ms + self.rest_window_ms
    }

    pub fn validate(&self) -> Result<()> {
        if self.label == 0 || self.label > MAX_LABEL {
            return Err(Error::invalid("pattern", "label must lie in 1..=10"));
        }
        if self.pulse_width_ms == 0 {
            return Err(Error::invalid("pattern", "pulse width must be positive"));
        }
        let n = self.pulse_count();
        // Uniform spacing puts pulse k at floor(k * active / n); the last pulse must end inside the window.
        let last_onset = (n - 1) * self.active_window_ms / n;
        if n * self.pulse_width_ms > self.active_window_ms
            || last_onset + self.pulse_width_ms > self.active_window_ms
            || self.active_window_ms / n < self.pulse_width_ms
        {
            return Err(Error::invalid("pattern", "pulses do not fit in the active window"));
        }
        Ok(())
    }
}

/// The ten standard patterns.
pub fn standard_patterns() -> Vec<PatternSpec> {
    (1..=MAX_LABEL)
        .map(|l| PatternSpec::new(l).expect("standard pattern"))
        .collect()
}

/// One light pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub onset_ms: u64,
    pub duration_ms: u32,
    pub intensity: f64,
    pub label: Option<u8>,
}

impl Pulse {
    pub fn end_ms(&self) -> u64 {
        self.onset_ms + u64::from(self.duration_ms)
    }
}

/// A labeled presentation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternWindow {
    pub onset_ms: u64,
    pub active_ms: u32,
    pub length_ms: u32,
    pub label: u8,
}

impl PatternWindow {
    pub fn end_ms(&self) -> u64 {
        self.onset_ms + u64::from(self.length_ms)
    }
}

/// Emits the pulses of one pattern starting at `onset_ms`.
pub fn encode_pattern(spec: &PatternSpec, onset_ms: u64, intensity: f64) -> Result<Vec<Pulse>> {
    spec.validate()?;
    if !intensity.is_finite() || intensity < 0.0 {
        return Err(Error::invalid("intensity", "must be finite and nonnegative"));
    }
    let n = spec.pulse_count();
    Ok((0..n)
        .map(|k| Pulse {
            onset_ms: onset_ms + u64::from(k * spec.active_window_ms / n),
            duration_ms: spec.pulse_width_ms,
            intensity,
            label: Some(spec.label),
        })
        .collect())
}

/// Recovers the pulse count of every window from the event table.
pub fn decode_pulse_counts(program: &StimulusProgram) -> Vec<u32> {
    let mut counts = Vec::with_capacity(program.windows.len());
    let mut i = 0;
    for w in &program.windows {
        while i < program.events.len() && program.events[i].onset_ms < w.onset_ms {
            i += 1;
        }
        let mut c = 0;
        while i < program.events.len() && program.events[i].onset_ms < w.end_ms() {
            c += 1;
            i += 1;
        }
        counts.push(c);
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveShape {
    Triangular,
}

/// Background modulation used for chaos control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationSpec {
    pub shape: WaveShape,
    pub frequency_hz: f64,
    pub duty_cycle: f64,
    pub amplitude_fraction: f64,
    pub lead_in_ms: u64,
    /// Offset of the rising zero-crossing relative to window onsets.
    pub phase_offset_ms: f64,
    pub enabled: bool,
}

impl Default for ModulationSpec {
    fn default() -> Self {
        ModulationSpec {
            shape: WaveShape::Triangular,
            frequency_hz: 1.0,
            duty_cycle: 1.0,
            amplitude_fraction: 0.10,
            lead_in_ms: 40_000,
            phase_offset_ms: 0.0,
            enabled: true,
        }
    }
}

impl ModulationSpec {
    pub fn disabled() -> Self {
        ModulationSpec {
            enabled: false,
            ..ModulationSpec::default()
        }
    }

    pub fn period_ms(&self) -> f64 {
        1000.0 / self.frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_fraction > 0.0 && self.amplitude_fraction < 1.0) {
            return Err(Error::invalid("modulation", "amplitude fraction must lie in (0, 1)"));
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(Error::invalid("modulation", "frequency must be positive"));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(Error::invalid("modulation", "duty cycle must lie in (0, 1]"));
        }
        if !self.phase_offset_ms.is_finite() {
            return Err(Error::invalid("modulation", "phase offset must be finite"));
        }
        Ok(())
    }
}

/// Modulation value (fraction of pattern intensity) at time `t_ms`.
///
/// `anchor_ms` is the onset of the first pattern window. The waveform is zero
/// before `anchor_ms - lead_in`, and within each period rises linearly from
/// zero at the anchor phase to `amplitude_fraction` at mid-duty, then falls
/// back to zero.
pub fn modulation_waveform(spec: &ModulationSpec, anchor_ms: u64, t_ms: f64) -> f64 {
    if !spec.enabled {
        return 0.0;
    }
    let start = anchor_ms as f64 - spec.lead_in_ms as f64;
    if t_ms < start.max(0.0) {
        return 0.0;
    }
    let period = spec.period_ms();
    let rel = t_ms - anchor_ms as f64 - spec.phase_offset_ms;
    let phase = libm::fmod(rel, period);
    let phase = if phase < 0.0 { phase + period } else { phase } / period;
    if phase >= spec.duty_cycle {
        return 0.0;
    }
    let u = phase / spec.duty_cycle;
    let tri = if u < 0.5 { 2.0 * u } else { 2.0 * (1.0 - u) };
    spec.amplitude_fraction * tri
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusProgram {
    pub events: Vec<Pulse>,
    pub windows: Vec<PatternWindow>,
    pub modulation: ModulationSpec,
    /// Pattern intensity that the modulation amplitude refers to.
    pub reference_intensity: f64,
    /// Phase anchor for the modulation: onset of the first pattern window.
    pub anchor_ms: u64,
    pub span_ms: u64,
}

impl StimulusProgram {
    /// A program without patterns (spontaneous recording, optionally modulated).
    pub fn silent(span_ms: u64) -> Self {
        StimulusProgram {
            events: Vec::new(),
            windows: Vec::new(),
            modulation: ModulationSpec::disabled(),
            reference_intensity: DEFAULT_INTENSITY,
            anchor_ms: 0,
            span_ms,
        }
    }

    /// Lays out `labels` as back-to-back windows starting at `start_ms`.
    pub fn from_labels(
        pattern_set: &[PatternSpec],
        labels: &[u8],
        start_ms: u64,
        intensity: f64,
    ) -> Result<Self> {
        let mut program = StimulusProgram::silent(start_ms);
        program.reference_intensity = intensity;
        program.anchor_ms = start_ms;
        program.push_windows(pattern_set, labels, start_ms)?;
        Ok(program)
    }

    fn push_windows(&mut self, pattern_set: &[PatternSpec], labels: &[u8], start_ms: u64) -> Result<u64> {
        let mut t = start_ms;
        for &label in labels {
            let spec = pattern_set
                .iter()
                .find(|p| p.label == label)
                .ok_or_else(|| Error::invalid("program", "label not in pattern set"))?;
            self.events
                .extend(encode_pattern(spec, t, self.reference_intensity)?);
            self.windows.push(PatternWindow {
                onset_ms: t,
                active_ms: spec.active_window_ms,
                length_ms: spec.window_ms(),
                label,
            });
            t += u64::from(spec.window_ms());
        }
        self.span_ms = self.span_ms.max(t);
        Ok(t)
    }

    /// Program time at which the modulation support begins.
    pub fn modulation_start_ms(&self) -> u64 {
        self.anchor_ms.saturating_sub(self.modulation.lead_in_ms)
    }

    /// Total drive (pulses plus modulation) at time `t_ms`, in intensity units.
    pub fn modulation_at(&self, t_ms: f64) -> f64 {
        if t_ms >= self.span_ms as f64 {
            return 0.0;
        }
        self.reference_intensity * modulation_waveform(&self.modulation, self.anchor_ms, t_ms)
    }

    /// Appends `other` after this program, shifted by `offset_ms` from the program origin.
    ///
    /// The modulation and anchor of `self` are kept.
    pub fn append_shifted(&mut self, other: &StimulusProgram, offset_ms: u64) -> Result<()> {
        if let (Some(last), Some(first)) = (self.events.last(), other.events.first()) {
            if first.onset_ms + offset_ms < last.end_ms() {
                return Err(Error::invalid("program", "appended events overlap"));
            }
        }
        if let (Some(last), Some(first)) = (self.windows.last(), other.windows.first()) {
            if first.onset_ms + offset_ms < last.end_ms() {
                return Err(Error::invalid("program", "appended windows overlap"));
            }
        }
        if self.windows.is_empty() {
            if let Some(first) = other.windows.first() {
                self.anchor_ms = first.onset_ms + offset_ms;
            }
        }
        self.events.extend(other.events.iter().map(|e| Pulse {
            onset_ms: e.onset_ms + offset_ms,
            ..*e
        }));
        self.windows.extend(other.windows.iter().map(|w| PatternWindow {
            onset_ms: w.onset_ms + offset_ms,
            ..*w
        }));
        self.span_ms = self.span_ms.max(other.span_ms + offset_ms);
        Ok(())
    }

    /// Checks ordering, non-overlap and span invariants.
    pub fn validate(&self) -> Result<()> {
        for pair in self.events.windows(2) {
            if pair[1].onset_ms < pair[0].end_ms() {
                return Err(Error::invalid("program", "pulses overlap or are unsorted"));
            }
        }
        for pair in self.windows.windows(2) {
            if pair[1].onset_ms < pair[0].end_ms() {
                return Err(Error::invalid("program", "windows overlap or are unsorted"));
            }
        }
        if let Some(e) = self.events.last() {
            if e.end_ms() > self.span_ms {
                return Err(Error::invalid("program", "pulse extends past span"));
            }
        }
        if let Some(w) = self.windows.last() {
            if w.end_ms() > self.span_ms {
                return Err(Error::invalid("program", "window extends past span"));
            }
        }
        if self.events.iter().any(|e| !e.intensity.is_finite() || e.intensity < 0.0)
            || !self.reference_intensity.is_finite()
        {
            return Err(Error::invalid("program", "non-finite intensity"));
        }
        if self.modulation.enabled {
            self.modulation.validate()?;
        }
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.windows.iter().map(|w| w.label)
    }
}

fn draw_labels(pattern_set: &[PatternSpec], count: usize, seed: u64) -> Result<Vec<u8>> {
    if pattern_set.is_empty() {
        return Err(Error::invalid("pattern set", "must not be empty"));
    }
    for p in pattern_set {
        p.validate()?;
    }
    let mut rng = seed::rng(seed);
    Ok((0..count)
        .map(|_| pattern_set[rng.random_range(0..pattern_set.len())].label)
        .collect())
}

/// `count` uniformly drawn patterns presented back to back from time zero.
pub fn build_training_program(pattern_set: &[PatternSpec], count: usize, seed: u64) -> Result<StimulusProgram> {
    if count == 0 {
        return Err(Error::invalid("training program", "count must be positive"));
    }
    let labels = draw_labels(pattern_set, count, seed)?;
    StimulusProgram::from_labels(pattern_set, &labels, 0, DEFAULT_INTENSITY)
}

/// Timing of the longitudinal test protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestSchedule {
    pub initial_rest_ms: u64,
    pub patterns_per_round: usize,
    pub round_rest_ms: u64,
    pub rounds: usize,
}

impl Default for TestSchedule {
    /// 15 min rest, then 47 rounds of 180 patterns (3 min) plus 12 min rest.
    fn default() -> Self {
        TestSchedule {
            initial_rest_ms: 15 * 60_000,
            patterns_per_round: 180,
            round_rest_ms: 12 * 60_000,
            rounds: 47,
        }
    }
}

impl TestSchedule {
    /// Span of one round (patterns plus rest) for 1 s windows.
    pub fn round_ms(&self) -> u64 {
        self.patterns_per_round as u64 * 1000 + self.round_rest_ms
    }

    pub fn span_ms(&self) -> u64 {
        self.initial_rest_ms + self.rounds as u64 * self.round_ms()
    }

    /// Onset of round `r` (zero-based) relative to the start of the test program.
    pub fn round_onset_ms(&self, r: usize) -> u64 {
        self.initial_rest_ms + r as u64 * self.round_ms()
    }

    /// Time reported for round `r`: the end of its block, relative to test start.
    pub fn round_time_ms(&self, r: usize) -> u64 {
        self.initial_rest_ms + (r as u64 + 1) * self.round_ms()
    }
}

/// The default 47-round test program.
pub fn build_test_program(pattern_set: &[PatternSpec], rounds: usize, seed: u64) -> Result<StimulusProgram> {
    build_test_program_with(
        pattern_set,
        &TestSchedule {
            rounds,
            ..TestSchedule::default()
        },
        seed,
    )
}

pub fn build_test_program_with(
    pattern_set: &[PatternSpec],
    schedule: &TestSchedule,
    seed: u64,
) -> Result<StimulusProgram> {
    if schedule.rounds == 0 || schedule.patterns_per_round == 0 {
        return Err(Error::invalid("test program", "rounds and patterns per round must be positive"));
    }
    if pattern_set.iter().any(|p| p.window_ms() != 1000) {
        return Err(Error::invalid("test program", "test rounds assume 1 s windows"));
    }
    let mut program = StimulusProgram::silent(0);
    program.anchor_ms = schedule.initial_rest_ms;
    for r in 0..schedule.rounds {
        let labels = draw_labels(
            pattern_set,
            schedule.patterns_per_round,
            seed::derive_indexed(seed, "round", r as u64),
        )?;
        program.push_windows(pattern_set, &labels, schedule.round_onset_ms(r))?;
    }
    program.span_ms = schedule.span_ms();
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pulse_pattern() {
        let ev = encode_pattern(&PatternSpec::new(1).unwrap(), 500, 1.0).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].onset_ms, 500);
        assert_eq!(ev[0].duration_ms, 15);
    }

    #[test]
    fn ten_pulse_pattern() {
        let ev = encode_pattern(&PatternSpec::new(10).unwrap(), 0, 1.0).unwrap();
        assert_eq!(ev.len(), 10);
        let on: u32 = ev.iter().map(|p| p.duration_ms).sum();
        assert_eq!(on, 150);
        assert!(ev.last().unwrap().end_ms() <= 900);
    }

    #[test]
    fn three_pulses_uniform() {
        let ev = encode_pattern(&PatternSpec::new(3).unwrap(), 0, 1.0).unwrap();
        let on: Vec<u64> = ev.iter().map(|p| p.onset_ms).collect();
        assert_eq!(on, [0, 300, 600]);
    }

    #[test]
    fn rejects_bad_patterns() {
        assert!(PatternSpec::new(0).is_err());
        assert!(PatternSpec::new(11).is_err());
        let crowded = PatternSpec {
            label: 10,
            pulse_width_ms: 95,
            active_window_ms: 900,
            rest_window_ms: 100,
        };
        assert!(encode_pattern(&crowded, 0, 1.0).is_err());
    }

    #[test]
    fn training_program_span_and_reproducibility() {
        let set = standard_patterns();
        let a = build_training_program(&set, 3600, 11).unwrap();
        assert_eq!(a.span_ms, 3_600_000);
        assert_eq!(a.windows.len(), 3600);
        let b = build_training_program(&set, 3600, 11).unwrap();
        assert_eq!(a, b);
        assert!(build_training_program(&[], 10, 1).is_err());
        assert!(build_training_program(&set, 0, 1).is_err());
        a.validate().unwrap();
    }

    #[test]
    fn training_labels_are_uniform() {
        // Binomial(10000, 0.1): mean 1000, sd 30.
        let set = standard_patterns();
        let p = build_training_program(&set, 10_000, 5).unwrap();
        let mut counts = [0usize; 11];
        for l in p.labels() {
            counts[l as usize] += 1;
        }
        for &c in &counts[1..] {
            assert!((c as f64 - 1000.0).abs() <= 90.0, "count {c}");
        }
    }

    #[test]
    fn test_program_layout() {
        let set = standard_patterns();
        let p = build_test_program(&set, 47, 3).unwrap();
        assert_eq!(p.span_ms, 720 * 60_000);
        assert_eq!(p.windows.len(), 47 * 180);
        assert_eq!(p.windows[0].onset_ms, 15 * 60_000);
        p.validate().unwrap();

        let one = build_test_program(&set, 1, 3).unwrap();
        assert_eq!(one.windows.len(), 180);

        let two = build_test_program(&set, 2, 3).unwrap();
        let first: Vec<u8> = two.windows[..180].iter().map(|w| w.label).collect();
        let second: Vec<u8> = two.windows[180..].iter().map(|w| w.label).collect();
        assert_ne!(first, second);
    }

    #[test]
    fn waveform_shape() {
        let spec = ModulationSpec::default();
        let anchor = 60_000;
        assert_eq!(modulation_waveform(&spec, anchor, 10_000.0), 0.0);
        assert_eq!(modulation_waveform(&spec, anchor, 60_000.0), 0.0);
        assert!(modulation_waveform(&spec, anchor, 60_001.0) > 0.0);
        assert!((modulation_waveform(&spec, anchor, 60_500.0) - 0.10).abs() < 1e-12);
        assert!((modulation_waveform(&spec, anchor, 20_250.0) - 0.05).abs() < 1e-12);
        assert_eq!(modulation_waveform(&ModulationSpec::disabled(), anchor, 60_500.0), 0.0);
    }

    #[test]
    fn decode_recovers_labels() {
        let set = standard_patterns();
        let labels: Vec<u8> = (1..=10).rev().collect();
        let p = StimulusProgram::from_labels(&set, &labels, 0, 1.0).unwrap();
        let counts = decode_pulse_counts(&p);
        assert_eq!(counts, labels.iter().map(|&l| u32::from(l)).collect::<Vec<_>>());
    }
}
