// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration and its plain-text file.
//!
//! ```text
//! ccrc-config 1
//! protocol=naive_rc|cc_rc|kt
//! preset=A|B|C|D                   optional; substrate.* keys override it
//! substrate.<field>=<value>
//! drift.<field>=<value>            rates per uncompressed hour
//! control.<field>=<value>          modulation used by cc_rc and kt
//! time_compression=<real >= 1>
//! seed=<u64>
//! seed.substrate|seed.program|seed.folds=<u64>   optional overrides
//! training.patterns=<n>
//! test.rounds|test.patterns_per_round|test.round_rest_ms|test.initial_rest_ms=<n>
//! preflight.duration_ms=<n>      0 skips the spontaneous pre-flight recording
//! kt.<field>=<value>
//! output_dir=<path>                optional
//! ```
//!
//! Unknown keys are rejected. Absent keys take the defaults documented on
//! [`ExperimentConfig`].

use std::fmt::Write as _;
use std::path::PathBuf;

use ccrc_core::encoding::{ModulationSpec, TestSchedule};
use ccrc_core::diagnostics::MIN_RECORDING_S;
use ccrc_core::seed;
use ccrc_core::substrate::{preset, ActivityType, Adaptation, Depression, DriftConfig, SubstrateConfig};

use crate::error::{Error, Result};
use crate::formats::program::{read_modulation, write_modulation};
use crate::text::{real, Cursor, KeyValues};

pub const MAGIC: &str = "ccrc-config";
pub const VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CCRC_OUTPUT_DIR";

/// Rounds of the full-length longitudinal test.
pub const FULL_TEST_ROUNDS: usize = 47;
pub const DEFAULT_TRAINING_PATTERNS: usize = 360;
pub const DEFAULT_COMPRESSION: f64 = 12.0;
pub const DEFAULT_PREFLIGHT_MS: u64 = 300_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    NaiveRc,
    CcRc,
    Kt,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::NaiveRc => "naive_rc",
            Protocol::CcRc => "cc_rc",
            Protocol::Kt => "kt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "naive_rc" => Ok(Protocol::NaiveRc),
            "cc_rc" => Ok(Protocol::CcRc),
            "kt" => Ok(Protocol::Kt),
            _ => Err(Error::Config(format!("unknown protocol '{s}'"))),
        }
    }
}

/// Seeds of every random stream in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub root: u64,
    pub substrate: u64,
    pub program: u64,
    pub folds: u64,
}

impl Seeds {
    /// Streams derived from `root` by name.
    pub fn from_root(root: u64) -> Self {
        Seeds {
            root,
            substrate: seed::derive(root, "substrate"),
            program: seed::derive(root, "program"),
            folds: seed::derive(root, "folds"),
        }
    }
}

/// Knowledge-transplant settings; the expert is the configured substrate.
#[derive(Debug, Clone, PartialEq)]
pub struct KtSettings {
    /// Labeled student windows used to estimate the student attractor.
    pub probe_budget: usize,
    /// Student substrate seed; `None` clones the expert network.
    pub student_seed: Option<u64>,
    /// Seed of a channel relabeling applied to the student recording.
    pub permutation_seed: Option<u64>,
    /// Student training stream, split 70/30 into refinement and evaluation samples.
    pub stream_patterns: usize,
    /// Held-out windows for the expert's self-accuracy.
    pub expert_eval_patterns: usize,
    pub latent_dim: usize,
    pub phase_bins: usize,
    /// First phase bin used for alignment points.
    pub alignment_phase_start: usize,
    /// Refinement sample counts of the learning curve; zero is the zero-shot point.
    pub refine_points: Vec<usize>,
    /// Strength of the pull toward the transplanted readout, in pseudo-samples.
    pub anchor_samples: f64,
}

impl Default for KtSettings {
    fn default() -> Self {
        KtSettings {
            probe_budget: ccrc_core::transplant::DEFAULT_PROBE_BUDGET,
            student_seed: None,
            permutation_seed: None,
            stream_patterns: 360,
            expert_eval_patterns: 180,
            latent_dim: 8,
            phase_bins: 10,
            alignment_phase_start: 5,
            refine_points: vec![0, 10, 25, 50, 75, 100, 150, 200, 252],
            anchor_samples: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    /// Preset the substrate started from, if any.
    pub preset: Option<ActivityType>,
    /// Substrate parameters; the seed field is replaced by `seeds.substrate` at run time.
    pub substrate: SubstrateConfig,
    /// Drift rates per uncompressed hour.
    pub drift: DriftConfig,
    pub control: ModulationSpec,
    /// Factor ≥ 1 dividing the session counts and the drift clock.
    pub time_compression: f64,
    pub seeds: Seeds,
    pub training_patterns: usize,
    pub test: TestSchedule,
    pub preflight_ms: u64,
    pub kt: KtSettings,
    pub output_dir: Option<PathBuf>,
}

/// Test rounds kept at compression `c`: the full round count divided by `c`, rounded up.
pub fn compressed_rounds(c: f64) -> usize {
    ((FULL_TEST_ROUNDS as f64 / c).ceil() as usize).max(1)
}

impl ExperimentConfig {
    /// Desk defaults for `protocol` on the given preset.
    pub fn new(protocol: Protocol, kind: ActivityType, root_seed: u64) -> Self {
        ExperimentConfig {
            protocol,
            preset: Some(kind),
            substrate: preset(kind),
            drift: DriftConfig::disabled(),
            control: ModulationSpec::default(),
            time_compression: DEFAULT_COMPRESSION,
            seeds: Seeds::from_root(root_seed),
            training_patterns: DEFAULT_TRAINING_PATTERNS,
            test: TestSchedule {
                rounds: compressed_rounds(DEFAULT_COMPRESSION),
                ..TestSchedule::default()
            },
            preflight_ms: DEFAULT_PREFLIGHT_MS,
            kt: KtSettings::default(),
            output_dir: None,
        }
    }

    /// Sets the compression and the test round count that goes with it.
    pub fn with_compression(mut self, c: f64) -> Self {
        self.time_compression = c;
        self.test.rounds = compressed_rounds(c);
        self
    }

    /// True when modulation is applied during the session.
    pub fn control_on(&self) -> bool {
        self.control.enabled && matches!(self.protocol, Protocol::CcRc | Protocol::Kt)
    }

    /// Substrate used for the run, seeded from the seed hierarchy.
    pub fn run_substrate(&self) -> SubstrateConfig {
        SubstrateConfig {
            seed: self.seeds.substrate,
            ..self.substrate.clone()
        }
    }

    /// Drift on the simulated clock.
    pub fn run_drift(&self) -> DriftConfig {
        self.drift.compressed(self.time_compression)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_compression >= 1.0 && self.time_compression.is_finite()) {
            return Err(Error::Config("time_compression must be a finite factor >= 1".into()));
        }
        if self.training_patterns < 20 {
            return Err(Error::Config("training.patterns must be at least 20".into()));
        }
        if self.preflight_ms != 0 && (self.preflight_ms as f64) < MIN_RECORDING_S * 1000.0 {
            return Err(Error::Config(format!(
                "preflight.duration_ms must be 0 (skip) or at least {} ms",
                MIN_RECORDING_S * 1000.0
            )));
        }
        if self.test.rounds == 0 || self.test.patterns_per_round == 0 {
            return Err(Error::Config("test rounds and patterns per round must be positive".into()));
        }
        if self.protocol == Protocol::Kt {
            let kt = &self.kt;
            if kt.probe_budget == 0 || kt.stream_patterns < 20 || kt.expert_eval_patterns == 0 {
                return Err(Error::Config("kt budgets must be positive and the stream at least 20 windows".into()));
            }
            if kt.latent_dim == 0 || kt.phase_bins == 0 {
                return Err(Error::Config("kt.latent_dim and kt.phase_bins must be positive".into()));
            }
            if kt.alignment_phase_start >= kt.phase_bins {
                return Err(Error::Config("kt.alignment_phase_start must be below kt.phase_bins".into()));
            }
            if kt.refine_points.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("kt.refine_points must be increasing".into()));
            }
            if !(kt.anchor_samples >= 0.0 && kt.anchor_samples.is_finite()) {
                return Err(Error::Config("kt.anchor_samples must be finite and nonnegative".into()));
            }
        }
        self.run_substrate().validate()?;
        self.drift.validate()?;
        if self.control.enabled {
            self.control.validate()?;
        }
        Ok(())
    }

    /// Full configuration text; reading it back gives an equal config.
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        let _ = writeln!(out, "protocol={}", self.protocol.as_str());
        self.write_body(&mut out, true);
        if let Some(dir) = &self.output_dir {
            let _ = writeln!(out, "output_dir={}", dir.display());
        }
        out
    }

    /// Text that determines the run's outcome.
    ///
    /// The two reservoir-computing protocols differ only in whether control is
    /// on, so they share one description; the output directory is left out.
    pub fn provenance_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        let protocol = match self.protocol {
            Protocol::NaiveRc | Protocol::CcRc => "rc",
            Protocol::Kt => "kt",
        };
        let _ = writeln!(out, "protocol={protocol}");
        let _ = writeln!(out, "control={}", if self.control_on() { "on" } else { "off" });
        self.write_body(&mut out, self.control_on());
        out
    }

    fn write_body(&self, out: &mut String, with_control: bool) {
        if let Some(p) = self.preset {
            let _ = writeln!(out, "preset={p}");
        }
        let s = &self.substrate;
        let _ = writeln!(out, "substrate.neuron_count={}", s.neuron_count);
        let _ = writeln!(out, "substrate.channel_count={}", s.channel_count);
        let _ = writeln!(out, "substrate.connection_probability={}", real(s.connection_probability));
        let _ = writeln!(out, "substrate.synaptic_weight_scale={}", real(s.synaptic_weight_scale));
        let _ = writeln!(out, "substrate.depression_utilization={}", real(s.depression.utilization));
        let _ = writeln!(out, "substrate.depression_recovery_ms={}", real(s.depression.recovery_ms));
        let _ = writeln!(out, "substrate.adaptation_increment={}", real(s.adaptation.increment));
        let _ = writeln!(out, "substrate.adaptation_time_constant_ms={}", real(s.adaptation.time_constant_ms));
        let _ = writeln!(out, "substrate.inhibitory_fraction={}", real(s.inhibitory_fraction));
        let _ = writeln!(out, "substrate.inhibitory_ratio={}", real(s.inhibitory_ratio));
        let _ = writeln!(out, "substrate.membrane_time_constant_ms={}", real(s.membrane_time_constant_ms));
        let _ = writeln!(out, "substrate.excitability_bias={}", real(s.excitability_bias));
        let _ = writeln!(out, "substrate.bias_spread={}", real(s.bias_spread));
        let _ = writeln!(out, "substrate.noise_rate_hz={}", real(s.noise_rate_hz));
        let _ = writeln!(out, "substrate.noise_amplitude={}", real(s.noise_amplitude));
        let _ = writeln!(out, "substrate.light_gain={}", real(s.light_gain));
        let _ = writeln!(out, "substrate.stimulated_fraction={}", real(s.stimulated_fraction));
        let d = &self.drift;
        let _ = writeln!(out, "drift.enabled={}", d.enabled);
        let _ = writeln!(out, "drift.efficacy_decay_rate={}", real(d.efficacy_decay_rate));
        let _ = writeln!(out, "drift.excitability_drift_rate={}", real(d.excitability_drift_rate));
        let _ = writeln!(out, "drift.responsiveness_cutoff_h={}", real(d.responsiveness_cutoff_h));
        if with_control {
            write_modulation(out, "control.", &self.control);
        }
        let _ = writeln!(out, "time_compression={}", real(self.time_compression));
        let _ = writeln!(out, "seed={}", self.seeds.root);
        let _ = writeln!(out, "seed.substrate={}", self.seeds.substrate);
        let _ = writeln!(out, "seed.program={}", self.seeds.program);
        let _ = writeln!(out, "seed.folds={}", self.seeds.folds);
        let _ = writeln!(out, "training.patterns={}", self.training_patterns);
        let t = &self.test;
        let _ = writeln!(out, "test.rounds={}", t.rounds);
        let _ = writeln!(out, "test.patterns_per_round={}", t.patterns_per_round);
        let _ = writeln!(out, "test.round_rest_ms={}", t.round_rest_ms);
        let _ = writeln!(out, "test.initial_rest_ms={}", t.initial_rest_ms);
        let _ = writeln!(out, "preflight.duration_ms={}", self.preflight_ms);
        if self.protocol == Protocol::Kt {
            let k = &self.kt;
            let _ = writeln!(out, "kt.probe_budget={}", k.probe_budget);
            if let Some(s) = k.student_seed {
                let _ = writeln!(out, "kt.student_seed={s}");
            }
            if let Some(s) = k.permutation_seed {
                let _ = writeln!(out, "kt.permutation_seed={s}");
            }
            let _ = writeln!(out, "kt.stream_patterns={}", k.stream_patterns);
            let _ = writeln!(out, "kt.expert_eval_patterns={}", k.expert_eval_patterns);
            let _ = writeln!(out, "kt.latent_dim={}", k.latent_dim);
            let _ = writeln!(out, "kt.phase_bins={}", k.phase_bins);
            let _ = writeln!(out, "kt.alignment_phase_start={}", k.alignment_phase_start);
            let pts: Vec<String> = k.refine_points.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "kt.refine_points={}", pts.join(","));
            let _ = writeln!(out, "kt.anchor_samples={}", real(k.anchor_samples));
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cur = Cursor::new("config file", text);
        cur.expect_magic(MAGIC, VERSION)?;
        let mut kv = cur.key_values()?;
        if !cur.at_end() {
            return Err(cur.err("config files hold key=value lines only"));
        }
        let protocol = Protocol::parse(&kv.req::<String>("protocol")?)?;
        let preset_kind = match kv.opt::<String>("preset")? {
            Some(p) => Some(ActivityType::parse(&p)?),
            None => None,
        };
        let root: u64 = kv.opt("seed")?.unwrap_or(0);
        let mut cfg = ExperimentConfig::new(protocol, preset_kind.unwrap_or(ActivityType::C), root);
        cfg.preset = preset_kind;
        if preset_kind.is_none() {
            cfg.substrate = SubstrateConfig::default();
        }
        read_substrate(&mut kv, &mut cfg.substrate)?;
        let d = &mut cfg.drift;
        d.enabled = kv.flag("drift.enabled")?.unwrap_or(d.enabled);
        d.efficacy_decay_rate = kv.opt("drift.efficacy_decay_rate")?.unwrap_or(d.efficacy_decay_rate);
        d.excitability_drift_rate = kv.opt("drift.excitability_drift_rate")?.unwrap_or(d.excitability_drift_rate);
        d.responsiveness_cutoff_h = kv.opt("drift.responsiveness_cutoff_h")?.unwrap_or(d.responsiveness_cutoff_h);
        cfg.control = read_modulation(&mut kv, "control.", cfg.control)?;
        if let Some(c) = kv.opt::<f64>("time_compression")? {
            cfg = cfg.with_compression(c);
        }
        cfg.seeds.substrate = kv.opt("seed.substrate")?.unwrap_or(cfg.seeds.substrate);
        cfg.seeds.program = kv.opt("seed.program")?.unwrap_or(cfg.seeds.program);
        cfg.seeds.folds = kv.opt("seed.folds")?.unwrap_or(cfg.seeds.folds);
        cfg.training_patterns = kv.opt("training.patterns")?.unwrap_or(cfg.training_patterns);
        let t = &mut cfg.test;
        t.rounds = kv.opt("test.rounds")?.unwrap_or(t.rounds);
        t.patterns_per_round = kv.opt("test.patterns_per_round")?.unwrap_or(t.patterns_per_round);
        t.round_rest_ms = kv.opt("test.round_rest_ms")?.unwrap_or(t.round_rest_ms);
        t.initial_rest_ms = kv.opt("test.initial_rest_ms")?.unwrap_or(t.initial_rest_ms);
        cfg.preflight_ms = kv.opt("preflight.duration_ms")?.unwrap_or(cfg.preflight_ms);
        let k = &mut cfg.kt;
        k.probe_budget = kv.opt("kt.probe_budget")?.unwrap_or(k.probe_budget);
        k.student_seed = kv.opt("kt.student_seed")?.or(k.student_seed);
        k.permutation_seed = kv.opt("kt.permutation_seed")?.or(k.permutation_seed);
        k.stream_patterns = kv.opt("kt.stream_patterns")?.unwrap_or(k.stream_patterns);
        k.expert_eval_patterns = kv.opt("kt.expert_eval_patterns")?.unwrap_or(k.expert_eval_patterns);
        k.latent_dim = kv.opt("kt.latent_dim")?.unwrap_or(k.latent_dim);
        k.phase_bins = kv.opt("kt.phase_bins")?.unwrap_or(k.phase_bins);
        k.alignment_phase_start = kv.opt("kt.alignment_phase_start")?.unwrap_or(k.alignment_phase_start);
        if let Some(pts) = kv.opt::<String>("kt.refine_points")? {
            k.refine_points = pts
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad kt.refine_points entry '{p}'"))))
                .collect::<Result<_>>()?;
        }
        k.anchor_samples = kv.opt("kt.anchor_samples")?.unwrap_or(k.anchor_samples);
        cfg.output_dir = kv.opt::<String>("output_dir")?.map(PathBuf::from);
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_substrate(kv: &mut KeyValues, s: &mut SubstrateConfig) -> Result<()> {
    macro_rules! field {
        ($key:literal, $place:expr) => {
            if let Some(v) = kv.opt(concat!("substrate.", $key))? {
                $place = v;
            }
        };
    }
    field!("neuron_count", s.neuron_count);
    field!("channel_count", s.channel_count);
    field!("connection_probability", s.connection_probability);
    field!("synaptic_weight_scale", s.synaptic_weight_scale);
    let mut dep: Depression = s.depression;
    field!("depression_utilization", dep.utilization);
    field!("depression_recovery_ms", dep.recovery_ms);
    s.depression = dep;
    let mut ad: Adaptation = s.adaptation;
    field!("adaptation_increment", ad.increment);
    field!("adaptation_time_constant_ms", ad.time_constant_ms);
    s.adaptation = ad;
    field!("inhibitory_fraction", s.inhibitory_fraction);
    field!("inhibitory_ratio", s.inhibitory_ratio);
    field!("membrane_time_constant_ms", s.membrane_time_constant_ms);
    field!("excitability_bias", s.excitability_bias);
    field!("bias_spread", s.bias_spread);
    field!("noise_rate_hz", s.noise_rate_hz);
    field!("noise_amplitude", s.noise_amplitude);
    field!("light_gain", s.light_gain);
    field!("stimulated_fraction", s.stimulated_fraction);
    Ok(())
}
