// SPDX-License-Identifier: Apache-2.0

//! End-to-end protocols: naive RC, chaos-controlled RC and knowledge transplant.
//!
//! Session layout (all protocols): a silent lead-in of `control.lead_in_ms`,
//! then the training windows, then the test (or evaluation) windows. The
//! lead-in is present whether or not control is on, so paired runs share one
//! event table and differ only in the modulation.

use ccrc_core::control::{apply_control, entrainment_metrics, EntrainmentReport};
use ccrc_core::diagnostics::{
    detect_bursts, diagnose, BurstEvents, DiagnosticsConfig, DiagnosticsReport, BURST_BIN_MS, BURST_THRESHOLD_FRACTION,
};
use ccrc_core::encoding::{build_test_program_with, build_training_program, standard_patterns, StimulusProgram};
use ccrc_core::latent::{
    estimate_evoked_attractor, fit_gpfa_segments, infer_trajectory, AttractorModel, GpfaParams, LabeledTrajectory,
    LatentModel,
};
use ccrc_core::readout::{
    accuracy_timeline, evaluate, extract_features, feature_energy, fine_tune_on_reference, train_ridge, AccuracyTimeline,
    FeatureSpace, LabeledFeatureSet, ReadoutModel, DEFAULT_FOLDS, DEFAULT_LAMBDA_GRID, FEATURE_BIN_MS,
};
use ccrc_core::seed;
use ccrc_core::substrate::{
    bin_rates, simulate, ActivityType, DriftConfig, FiringRateMatrix, SpikeTrainSet, Substrate,
};
use ccrc_core::transplant::{correspond_points, fit_alignment, TransplantRecord};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Protocol, Seeds};
use crate::error::{Error, Result};
use crate::formats::model::{ModelFile, ModelObject};
use crate::report::{Provenance, RunReport, RunRole, TrainingSummary, TransplantSummary};

const MS_PER_HOUR: f64 = 3_600_000.0;

/// Hex SHA-256 of `text`.
pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn provenance(config: &ExperimentConfig, role: RunRole, seeds: Seeds) -> Provenance {
    Provenance {
        role,
        control: config.control_on(),
        config_hash: sha256_hex(&config.provenance_text()),
        seeds,
        time_compression: config.time_compression,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Stimulus layout of a reservoir-computing session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub program: StimulusProgram,
    pub training_windows: usize,
    /// Absolute onset of the test program (its initial rest included).
    pub test_start_ms: u64,
    /// Absolute `[start, end)` of each test round.
    pub rounds_ms: Vec<(u64, u64)>,
    /// Reported time of each round in equivalent uncompressed hours after test start.
    pub round_times_h: Vec<f64>,
}

/// Training then longitudinal test, with modulation when control is on.
pub fn session_plan(config: &ExperimentConfig) -> Result<SessionPlan> {
    let patterns = standard_patterns();
    let lead = config.control.lead_in_ms;
    let training = build_training_program(
        &patterns,
        config.training_patterns,
        seed::derive(config.seeds.program, "training"),
    )?;
    let test = build_test_program_with(&patterns, &config.test, seed::derive(config.seeds.program, "test"))?;
    let mut program = StimulusProgram::silent(0);
    program.append_shifted(&training, lead)?;
    let test_start_ms = lead + training.span_ms;
    program.append_shifted(&test, test_start_ms)?;
    if config.control_on() {
        program = apply_control(&program, &config.control)?;
    }
    let t = &config.test;
    let rounds_ms = (0..t.rounds)
        .map(|r| {
            let s = test_start_ms + t.round_onset_ms(r);
            (s, s + t.round_ms())
        })
        .collect();
    let round_times_h = (0..t.rounds)
        .map(|r| t.round_time_ms(r) as f64 / MS_PER_HOUR * config.time_compression)
        .collect();
    Ok(SessionPlan {
        program,
        training_windows: config.training_patterns,
        test_start_ms,
        rounds_ms,
        round_times_h,
    })
}

/// Spontaneous pre-flight recording and its diagnostics, plus any warnings.
///
/// Returns `None` when the pre-flight duration is zero.
pub fn preflight(config: &ExperimentConfig, seeds: &Seeds) -> Result<Option<(DiagnosticsReport, Vec<String>)>> {
    if config.preflight_ms == 0 {
        return Ok(None);
    }
    let substrate = ccrc_core::substrate::SubstrateConfig {
        seed: seeds.substrate,
        ..config.substrate.clone()
    };
    let spikes = simulate(
        &substrate,
        &DriftConfig::disabled(),
        &StimulusProgram::silent(config.preflight_ms),
        config.preflight_ms,
    )?;
    let reservoir = Substrate::new(substrate, DriftConfig::disabled())?;
    let diag_cfg = DiagnosticsConfig {
        seed: seed::derive(seeds.root, "diagnostics"),
        ..DiagnosticsConfig::default()
    };
    let report = diagnose(&spikes, Some(&reservoir), &diag_cfg)?;
    let mut warnings = Vec::new();
    if report.type_label == ActivityType::A {
        warnings.push("pre-flight categorized the substrate as Type A; protocols expect Type C or D".to_string());
    }
    Ok(Some((report, warnings)))
}

/// Bursts with onsets in `[start, end)`, on the original clock.
fn bursts_between(bursts: &BurstEvents, start_ms: f64, end_ms: f64) -> BurstEvents {
    let mut out = BurstEvents::default();
    for i in 0..bursts.len() {
        let o = bursts.onsets_ms[i];
        if o >= start_ms && o < end_ms {
            out.onsets_ms.push(o);
            out.offsets_ms.push(bursts.offsets_ms[i]);
            out.spike_counts.push(bursts.spike_counts[i]);
        }
    }
    out
}

/// Burst timing during the pattern-bearing part of `[start, end)`.
pub fn session_entrainment(
    spikes: &SpikeTrainSet,
    program: &StimulusProgram,
    start_ms: f64,
    end_ms: f64,
) -> Result<EntrainmentReport> {
    let bursts = detect_bursts(spikes, BURST_BIN_MS, BURST_THRESHOLD_FRACTION)?;
    Ok(entrainment_metrics(&bursts_between(&bursts, start_ms, end_ms), program)?)
}

fn space_tag(space: FeatureSpace) -> String {
    match space {
        FeatureSpace::ObservedRates(d) => format!("observed:{d}"),
        FeatureSpace::Latent(d) => format!("latent:{d}"),
    }
}

fn trained(
    data: &LabeledFeatureSet,
    dropped: usize,
    folds_seed: u64,
    holdout: Option<&LabeledFeatureSet>,
) -> Result<(ReadoutModel, TrainingSummary)> {
    let folds = DEFAULT_FOLDS.min(data.len());
    let (model, cv) = train_ridge(data, &DEFAULT_LAMBDA_GRID, folds, folds_seed)?;
    let cv_accuracy = cv
        .scores
        .iter()
        .find(|(l, _)| *l == cv.chosen_lambda)
        .map_or(0.0, |s| s.1);
    let holdout_accuracy = match holdout {
        Some(h) if !h.is_empty() => Some(evaluate(&model, h)?),
        _ => None,
    };
    let summary = TrainingSummary {
        windows: data.len(),
        dropped_windows: dropped,
        feature_space: space_tag(data.space),
        ridge_lambda: model.ridge_lambda,
        cv_accuracy,
        holdout_accuracy,
    };
    Ok((model, summary))
}

/// Everything a reservoir-computing run produced, beyond its report.
#[derive(Debug, Clone)]
pub struct RcArtifacts {
    pub plan: SessionPlan,
    pub spikes: SpikeTrainSet,
    pub readout: ReadoutModel,
}

/// Runs the reservoir-computing protocol; control follows `config.control_on()`.
pub fn run_rc_detailed(config: &ExperimentConfig) -> Result<(RunReport, RcArtifacts)> {
    config.validate()?;
    let seeds = config.seeds;
    let (diagnostics, warnings) = match preflight(config, &seeds)? {
        Some((d, w)) => (Some(d), w),
        None => (None, Vec::new()),
    };
    let plan = session_plan(config)?;
    let spikes = simulate(
        &config.run_substrate(),
        &config.run_drift(),
        &plan.program,
        plan.program.span_ms,
    )?;
    let ex = extract_features(&spikes, &plan.program, None)?;
    let train = ex.data.time_range(0.0, plan.test_start_ms as f64);
    let (readout, summary) = trained(&train, ex.dropped, seeds.folds, None)?;
    let per_round: Vec<LabeledFeatureSet> = plan
        .rounds_ms
        .iter()
        .map(|&(s, e)| ex.data.time_range(s as f64, e as f64))
        .collect();
    let timeline = accuracy_timeline(&readout, &per_round, &plan.round_times_h)?;
    let entrainment = if config.control_on() {
        Some(session_entrainment(
            &spikes,
            &plan.program,
            plan.program.modulation_start_ms() as f64,
            plan.test_start_ms as f64,
        )?)
    } else {
        None
    };
    let report = RunReport {
        provenance: provenance(config, RunRole::Rc, seeds),
        diagnostics,
        training: Some(summary),
        entrainment,
        transplant: None,
        warnings,
        timeline,
        learning_curve: Vec::new(),
        scratch_curve: Vec::new(),
    };
    Ok((report, RcArtifacts { plan, spikes, readout }))
}

/// Naive RC: the session without modulation.
pub fn run_naive_rc(config: &ExperimentConfig) -> Result<RunReport> {
    let cfg = ExperimentConfig {
        protocol: Protocol::NaiveRc,
        ..config.clone()
    };
    Ok(run_rc_detailed(&cfg)?.0)
}

/// Chaos-controlled RC: modulation during training and testing (unless `control.enabled` is off).
pub fn run_cc_rc(config: &ExperimentConfig) -> Result<RunReport> {
    let cfg = ExperimentConfig {
        protocol: Protocol::CcRc,
        ..config.clone()
    };
    Ok(run_rc_detailed(&cfg)?.0)
}

/// Runs the protocol named in the config. KT returns the student report last.
pub fn run(config: &ExperimentConfig) -> Result<Vec<RunReport>> {
    match config.protocol {
        Protocol::NaiveRc => Ok(vec![run_naive_rc(config)?]),
        Protocol::CcRc => Ok(vec![run_cc_rc(config)?]),
        Protocol::Kt => {
            let student = student_config(config);
            let out = run_kt(config, &student, config.kt.probe_budget, &config.kt.refine_points)?;
            Ok(vec![out.expert_report, out.student_report])
        }
    }
}

// ---------------------------------------------------------------------------
// Knowledge transplant

/// Student configuration implied by the expert's `kt` settings.
///
/// Without `kt.student_seed` the student is a clone of the expert network;
/// it always receives its own stimulus sequence.
pub fn student_config(expert: &ExperimentConfig) -> ExperimentConfig {
    let mut s = expert.clone();
    s.seeds = Seeds {
        root: seed::derive(expert.seeds.root, "student"),
        substrate: expert.kt.student_seed.unwrap_or(expert.seeds.substrate),
        program: seed::derive(expert.seeds.program, "student"),
        folds: seed::derive(expert.seeds.folds, "student"),
    };
    s
}

/// Rate matrix of every labeled window, one trial per window.
pub fn window_trials(spikes: &SpikeTrainSet, program: &StimulusProgram) -> Result<(Vec<DMatrix<f64>>, Vec<u8>)> {
    let rates = bin_rates(spikes, FEATURE_BIN_MS, 0.0)?;
    let mut trials = Vec::with_capacity(program.windows.len());
    let mut labels = Vec::with_capacity(program.windows.len());
    for w in &program.windows {
        let first = rates.bin_at(w.onset_ms as f64);
        let last = rates.bin_at(w.end_ms() as f64 - FEATURE_BIN_MS);
        if let (Some(a), Some(b)) = (first, last) {
            trials.push(rates.values.columns(a, b - a + 1).into_owned());
            labels.push(w.label);
        }
    }
    Ok((trials, labels))
}

pub fn labeled_trajectories(
    model: &LatentModel,
    trials: &[DMatrix<f64>],
    labels: &[u8],
) -> Result<Vec<LabeledTrajectory>> {
    trials
        .iter()
        .zip(labels)
        .map(|(t, &label)| {
            let rates = FiringRateMatrix {
                bin_width_ms: FEATURE_BIN_MS,
                t0_ms: 0.0,
                values: t.clone(),
            };
            Ok(LabeledTrajectory {
                label,
                trajectory: infer_trajectory(model, &rates)?,
            })
        })
        .collect()
}

fn gpfa_params(latent_dim: usize) -> GpfaParams {
    GpfaParams {
        latent_dim,
        ..GpfaParams::default()
    }
}

/// Windows `[from, from + count)` of `program` as a standalone program on the same clock.
pub fn window_subset(program: &StimulusProgram, from: usize, count: usize) -> StimulusProgram {
    let mut p = program.clone();
    p.windows = program.windows[from..from + count].to_vec();
    p
}

/// Protocol program: lead-in, then back-to-back blocks of windows with the given counts.
pub fn block_program(config: &ExperimentConfig, blocks: &[(usize, &str)]) -> Result<StimulusProgram> {
    let patterns = standard_patterns();
    let mut program = StimulusProgram::silent(0);
    let mut t = config.control.lead_in_ms;
    for &(count, name) in blocks {
        let b = build_training_program(&patterns, count, seed::derive(config.seeds.program, name))?;
        program.append_shifted(&b, t)?;
        t += b.span_ms;
    }
    if config.control_on() {
        program = apply_control(&program, &config.control)?;
    }
    Ok(program)
}

/// Trained expert: latent model, readout and evoked attractor.
#[derive(Debug, Clone)]
pub struct Expert {
    pub latent: LatentModel,
    pub readout: ReadoutModel,
    pub attractor: AttractorModel,
    pub report: RunReport,
}

impl Expert {
    /// The expert bundle as written to a model file.
    pub fn model_file(&self) -> ModelFile {
        ModelFile {
            objects: vec![
                ModelObject::Latent(self.latent.clone()),
                ModelObject::Attractor(self.attractor.clone()),
                ModelObject::Readout(self.readout.clone()),
            ],
        }
    }
}

/// Trains a cc-RC expert in latent space and estimates its evoked attractor.
pub fn train_expert(config: &ExperimentConfig) -> Result<Expert> {
    config.validate()?;
    let seeds = config.seeds;
    let (diagnostics, warnings) = match preflight(config, &seeds)? {
        Some((d, w)) => (Some(d), w),
        None => (None, Vec::new()),
    };
    let n_train = config.training_patterns;
    let program = block_program(config, &[(n_train, "training"), (config.kt.expert_eval_patterns, "evaluation")])?;
    let spikes = simulate(&config.run_substrate(), &config.run_drift(), &program, program.span_ms)?;
    let train_prog = window_subset(&program, 0, n_train);
    let (trials, labels) = window_trials(&spikes, &train_prog)?;
    let fit = fit_gpfa_segments(&trials, FEATURE_BIN_MS, &gpfa_params(config.kt.latent_dim))?;
    let latent = fit.model;
    let ex = extract_features(&spikes, &program, Some(&latent))?;
    let split = program.windows[n_train].onset_ms as f64;
    let train = ex.data.time_range(0.0, split);
    let eval = ex.data.time_range(split, f64::INFINITY);
    let (readout, summary) = trained(&train, ex.dropped, seeds.folds, Some(&eval))?;
    let trajectories = labeled_trajectories(&latent, &trials, &labels)?;
    let attractor = estimate_evoked_attractor(&trajectories, config.kt.phase_bins)?;
    let report = RunReport {
        provenance: provenance(config, RunRole::KtExpert, seeds),
        diagnostics,
        training: Some(summary),
        entrainment: None,
        transplant: None,
        warnings,
        timeline: AccuracyTimeline {
            round_times_h: Vec::new(),
            accuracies: Vec::new(),
        },
        learning_curve: Vec::new(),
        scratch_curve: Vec::new(),
    };
    Ok(Expert {
        latent,
        readout,
        attractor,
        report,
    })
}

/// Fits a student latent model on probe windows, aligns it to the expert
/// attractor and composes the transplanted readout.
pub fn transplant_from_probes(
    expert: &Expert,
    probe_spikes: &SpikeTrainSet,
    probe_program: &StimulusProgram,
    latent_dim: usize,
    alignment_phase_start: usize,
    expert_id: &str,
    student_id: &str,
) -> Result<(LatentModel, TransplantRecord)> {
    let (trials, labels) = window_trials(probe_spikes, probe_program)?;
    if trials.is_empty() {
        return Err(Error::Config("no probe windows inside the probe recording".into()));
    }
    let fit = fit_gpfa_segments(&trials, FEATURE_BIN_MS, &gpfa_params(latent_dim))?;
    let student_latent = fit.model;
    let trajectories = labeled_trajectories(&student_latent, &trials, &labels)?;
    let corr = correspond_points(&trajectories, &expert.attractor)?.from_phase(alignment_phase_start)?;
    let lambda = 1e-6 * point_energy(&corr.student_points);
    let transform = fit_alignment(&corr.student_points, &corr.expert_points, lambda)?;
    let record = TransplantRecord::new(
        expert_id.to_string(),
        student_id.to_string(),
        &expert.readout,
        transform,
        format!(
            "expert trained on {} windows; {} probe windows; {} corresponding points",
            expert.report.training.as_ref().map_or(0, |t| t.windows),
            trials.len(),
            corr.keys.len()
        ),
    )?;
    Ok((student_latent, record))
}

/// Trace of the centered scatter divided by the dimension.
fn point_energy(points: &DMatrix<f64>) -> f64 {
    let mean = points.row_mean();
    let mut e = 0.0;
    for row in points.row_iter() {
        e += (row - &mean).norm_squared();
    }
    (e / points.ncols().max(1) as f64).max(f64::MIN_POSITIVE)
}

/// Output of [`run_kt`].
#[derive(Debug, Clone)]
pub struct KtOutcome {
    pub expert_report: RunReport,
    pub student_report: RunReport,
    pub record: TransplantRecord,
    pub student_latent: LatentModel,
}

/// Knowledge transplant from a cc-RC expert to a same-Type student.
///
/// The student sees `probe_budget` labeled probe windows, then a training
/// stream split 70/30 in time order. Each entry of `refine_schedule` is a
/// number of stream samples; the student curve fine-tunes the transplanted
/// readout on that many samples, and the from-scratch twin trains a fresh
/// readout on the same samples in the same student latent space.
pub fn run_kt(
    expert_config: &ExperimentConfig,
    student_config: &ExperimentConfig,
    probe_budget: usize,
    refine_schedule: &[usize],
) -> Result<KtOutcome> {
    if !expert_config.control_on() || !student_config.control_on() {
        return Err(Error::Config("knowledge transplant needs control on for expert and student".into()));
    }
    student_config.validate()?;
    let expert = train_expert(expert_config)?;
    let sseeds = student_config.seeds;
    let (s_diag, mut warnings) = match preflight(student_config, &sseeds)? {
        Some((d, w)) => (Some(d), w),
        None => (None, Vec::new()),
    };
    let expert_type = expert.report.diagnostics.as_ref().map(|d| d.type_label);
    let student_type = s_diag.as_ref().map(|d| d.type_label);
    match (expert_type, student_type) {
        (Some(e), Some(s)) if e != s => {
            return Err(Error::Config(format!("expert is Type {e} but student is Type {s}")));
        }
        (Some(_), Some(_)) => {}
        _ => {
            if expert_config.preset.is_some() && expert_config.preset != student_config.preset {
                return Err(Error::Config("expert and student presets differ".into()));
            }
            warnings.push("Type match taken from presets; pre-flight was skipped".to_string());
        }
    }
    let kt = &student_config.kt;
    let program = block_program(student_config, &[(probe_budget, "probes"), (kt.stream_patterns, "stream")])?;
    let mut spikes = simulate(
        &student_config.run_substrate(),
        &student_config.run_drift(),
        &program,
        program.span_ms,
    )?;
    if let Some(p) = kt.permutation_seed {
        spikes = spikes.permute_channels(&seed::permutation(spikes.channel_count(), p))?;
    }
    let probe_program = window_subset(&program, 0, probe_budget);
    let expert_id = format!("expert:{}", expert.report.provenance.config_hash);
    let student_id = format!("student:{}", sha256_hex(&student_config.provenance_text()));
    let (student_latent, record) =
        transplant_from_probes(
        &expert,
        &spikes,
        &probe_program,
        kt.latent_dim,
        kt.alignment_phase_start,
        &expert_id,
        &student_id,
    )?;

    let stream_program = window_subset(&program, probe_budget, kt.stream_patterns);
    let probe_features = extract_features(&spikes, &probe_program, Some(&student_latent))?.data;
    let stream = extract_features(&spikes, &stream_program, Some(&student_latent))?.data;
    let n_refine = stream.len() * 7 / 10;
    let refine_pool = stream.select(&(0..n_refine).collect::<Vec<_>>());
    let test = stream.select(&(n_refine..stream.len()).collect::<Vec<_>>());
    let transplanted = &record.transplanted_readout;
    let zero_shot = evaluate(transplanted, &test)?;

    let per_sample = feature_energy(&probe_features) / probe_features.len().max(1) as f64;
    let ft_lambda = 1e-3 * per_sample;
    let mut learning_curve = Vec::new();
    let mut scratch_curve = Vec::new();
    for &k in refine_schedule {
        let k = k.min(n_refine);
        let minutes = k as f64 / 60.0;
        let subset = refine_pool.select(&(0..k).collect::<Vec<_>>());
        let kt_model = if k == 0 {
            transplanted.clone()
        } else {
            fine_tune_on_reference(transplanted, &subset, &probe_features, ft_lambda, kt.anchor_samples)?
        };
        learning_curve.push((minutes, evaluate(&kt_model, &test)?));
        let mut classes = subset.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        if k >= 2 && classes.len() >= 2 {
            let folds = DEFAULT_FOLDS.min(k);
            let (m, _) = train_ridge(&subset, &DEFAULT_LAMBDA_GRID, folds, sseeds.folds)?;
            scratch_curve.push((minutes, evaluate(&m, &test)?));
        }
    }
    let shared_labels = record_shared_labels(&expert.attractor, &probe_program);
    let expert_accuracy = expert
        .report
        .training
        .as_ref()
        .and_then(|t| t.holdout_accuracy)
        .unwrap_or(f64::NAN);
    let student_report = RunReport {
        provenance: provenance(student_config, RunRole::KtStudent, sseeds),
        diagnostics: s_diag,
        training: None,
        entrainment: None,
        transplant: Some(TransplantSummary {
            expert_accuracy,
            zero_shot_accuracy: zero_shot,
            fit_residual: record.transform.fit_residual,
            probe_count: probe_budget,
            corresponding_points: record.transform.probe_count,
            shared_labels,
        }),
        warnings,
        timeline: AccuracyTimeline {
            round_times_h: Vec::new(),
            accuracies: Vec::new(),
        },
        learning_curve,
        scratch_curve,
    };
    Ok(KtOutcome {
        expert_report: expert.report,
        student_report,
        record,
        student_latent,
    })
}

fn record_shared_labels(attractor: &AttractorModel, probes: &StimulusProgram) -> usize {
    let mut labels: Vec<u8> = probes
        .windows
        .iter()
        .map(|w| w.label)
        .filter(|l| attractor.labeled.iter().any(|b| b.label == *l))
        .collect();
    labels.sort_unstable();
    labels.dedup();
    labels.len()
}

/// First refinement amount at which `curve` reaches `target`, as a fraction of `total_minutes`.
pub fn fraction_to_reach(curve: &[(f64, f64)], target: f64, total_minutes: f64) -> Option<f64> {
    curve
        .iter()
        .find(|(_, a)| *a >= target)
        .map(|(m, _)| if total_minutes > 0.0 { m / total_minutes } else { 0.0 })
}
