// SPDX-License-Identifier: Apache-2.0

//! Command-line interface. Exit codes: 0 success, 2 validation error, 3 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use ccrc_core::control::apply_control;
use ccrc_core::diagnostics::{diagnose, DiagnosticsConfig};
use ccrc_core::encoding::{
    build_test_program_with, build_training_program, standard_patterns, ModulationSpec, StimulusProgram, TestSchedule,
};
use ccrc_core::latent::{estimate_evoked_attractor, fit_gpfa_segments};
use ccrc_core::readout::{
    accuracy_timeline, extract_features, train_ridge, LabeledFeatureSet, DEFAULT_FOLDS, DEFAULT_LAMBDA_GRID,
    FEATURE_BIN_MS,
};
use ccrc_core::substrate::{preset, simulate, ActivityType, DriftConfig};

use crate::config::{ExperimentConfig, Protocol, OUTPUT_DIR_ENV};
use crate::error::{Error, Result};
use crate::formats::model::{self, ModelFile, ModelObject};
use crate::formats::{program, spikes};
use crate::harness::{self, Expert};
use crate::report::{self, emit_report, ReportFormat, RunReport};
use crate::text::{read_file, write_file};

const FALLBACK_OUTPUT_DIR: &str = "ccrc-out";

#[derive(Debug, Parser)]
#[command(name = "ccrc", version, about = "Chaos-controlled reservoir computing on a surrogate spiking substrate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProgramKind {
    Training,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Table,
    Plotdata,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Plotdata => ReportFormat::PlotData,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the substrate and write a spike file.
    Simulate {
        /// Experiment config supplying substrate, drift and control settings.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Activity-type preset used when no config is given.
        #[arg(long, default_value = "C")]
        preset: String,
        /// Stimulus program; without one the recording is spontaneous.
        #[arg(long)]
        program: Option<PathBuf>,
        /// Recording length; defaults to the program span, or 60 s without a program.
        #[arg(long)]
        duration_ms: Option<u64>,
        /// Apply the config's modulation to the program.
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        control: Switch,
        /// Output spike file (default: <output dir>/spikes.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a training or test stimulus program.
    Program {
        #[arg(long, value_enum)]
        kind: ProgramKind,
        /// Training windows, or patterns per test round.
        #[arg(long, default_value_t = 360)]
        count: usize,
        /// Test rounds.
        #[arg(long, default_value_t = 4)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Silent time before the first window.
        #[arg(long, default_value_t = 0)]
        start_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-flight diagnostics of a spontaneous recording, as key=value lines.
    Diagnose {
        #[arg(long)]
        spikes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a readout on the labeled windows of a recording.
    Train {
        #[arg(long)]
        spikes: PathBuf,
        #[arg(long)]
        program: PathBuf,
        /// Fit a latent model with this many dimensions, train in latent space
        /// and add the evoked attractor (an expert bundle for `transplant`).
        #[arg(long)]
        latent_dim: Option<usize>,
        /// Phase bins of the evoked attractor.
        #[arg(long, default_value_t = 10)]
        phase_bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a fixed readout per round; rounds are runs of back-to-back windows.
    Test {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        spikes: PathBuf,
        #[arg(long)]
        program: PathBuf,
        /// Output timeline table (round_time_h, accuracy); round times are window-onset hours.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attach (or remove) the chaos-control modulation of a program.
    Control {
        #[arg(long)]
        program: PathBuf,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        control: Switch,
        #[arg(long)]
        amplitude_fraction: Option<f64>,
        #[arg(long)]
        frequency_hz: Option<f64>,
        #[arg(long)]
        lead_in_ms: Option<u64>,
        /// Also report burst entrainment of this recording against the program.
        #[arg(long)]
        spikes: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transplant an expert readout onto a student from labeled probe windows.
    Transplant {
        /// Expert model file holding latent, attractor and readout objects.
        #[arg(long)]
        expert: PathBuf,
        /// Student probe recording.
        #[arg(long)]
        student_probes: PathBuf,
        /// Program of the probe recording.
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        latent_dim: Option<usize>,
        /// First phase bin used for alignment points (default: half the attractor's phase bins).
        #[arg(long)]
        alignment_phase_start: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full protocol from a config file and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override control: `on` turns a naive run into a cc-RC run, `off` disables modulation.
        #[arg(long, value_enum)]
        control: Option<Switch>,
        /// Output directory (default: config output_dir, then $CCRC_OUTPUT_DIR, then ./ccrc-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit a saved report in another format.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Output directory: explicit, then config, then the environment, then `./ccrc-out`.
pub fn output_dir(explicit: Option<&Path>, config: Option<&Path>) -> PathBuf {
    explicit
        .or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR))
}

fn out_file(out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| output_dir(None, None).join(name))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_text(&read_file(path)?)
}

fn load_program(path: &Path) -> Result<StimulusProgram> {
    program::from_text(&read_file(path)?)
}

fn load_spikes(path: &Path) -> Result<ccrc_core::substrate::SpikeTrainSet> {
    spikes::from_text(&read_file(path)?)
}

fn load_models(path: &Path) -> Result<ModelFile> {
    model::from_text(&read_file(path)?)
}

/// Groups windows into rounds separated by silent gaps.
fn rounds_of(program: &StimulusProgram) -> Vec<(u64, u64)> {
    let mut rounds: Vec<(u64, u64)> = Vec::new();
    for w in &program.windows {
        match rounds.last_mut() {
            Some(r) if r.1 == w.onset_ms => r.1 = w.end_ms(),
            _ => rounds.push((w.onset_ms, w.end_ms())),
        }
    }
    rounds
}

pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate {
            config,
            preset: preset_label,
            program: program_path,
            duration_ms,
            control,
            out,
        } => {
            let (substrate, drift, modulation) = match &config {
                Some(p) => {
                    let cfg = load_config(p)?;
                    (cfg.run_substrate(), cfg.run_drift(), cfg.control)
                }
                None => (
                    preset(ActivityType::parse(&preset_label)?),
                    DriftConfig::disabled(),
                    ModulationSpec::default(),
                ),
            };
            let mut prog = match &program_path {
                Some(p) => load_program(p)?,
                None => StimulusProgram::silent(duration_ms.unwrap_or(60_000)),
            };
            if control == Switch::On {
                prog = apply_control(&prog, &ModulationSpec { enabled: true, ..modulation })?;
            }
            let duration = duration_ms.unwrap_or(prog.span_ms);
            let sp = simulate(&substrate, &drift, &prog, duration)?;
            let path = out_file(out, "spikes.txt");
            write_file(&path, &spikes::to_text(&sp))?;
            Ok(format!("wrote {} ({} spikes)\n", path.display(), sp.total_spikes()))
        }
        Command::Program {
            kind,
            count,
            rounds,
            seed,
            start_ms,
            out,
        } => {
            let patterns = standard_patterns();
            let built = match kind {
                ProgramKind::Training => build_training_program(&patterns, count, seed)?,
                ProgramKind::Test => build_test_program_with(
                    &patterns,
                    &TestSchedule {
                        rounds,
                        patterns_per_round: count,
                        ..TestSchedule::default()
                    },
                    seed,
                )?,
            };
            let mut prog = StimulusProgram::silent(0);
            prog.append_shifted(&built, start_ms)?;
            let path = out_file(out, "program.txt");
            write_file(&path, &program::to_text(&prog))?;
            Ok(format!("wrote {} ({} windows)\n", path.display(), prog.windows.len()))
        }
        Command::Diagnose { spikes: sp, out } => {
            let rec = load_spikes(&sp)?;
            let d = diagnose(&rec, None, &DiagnosticsConfig::default())?;
            let block = report::diagnostics_block(&d);
            if let Some(path) = out {
                write_file(&path, &block)?;
            }
            Ok(block)
        }
        Command::Train {
            spikes: sp,
            program: prog,
            latent_dim,
            phase_bins,
            seed,
            out,
        } => {
            let rec = load_spikes(&sp)?;
            let prog = load_program(&prog)?;
            let mut file = ModelFile::default();
            let latent = match latent_dim {
                Some(q) => {
                    let (trials, labels) = harness::window_trials(&rec, &prog)?;
                    let params = ccrc_core::latent::GpfaParams {
                        latent_dim: q,
                        ..Default::default()
                    };
                    let fit = fit_gpfa_segments(&trials, FEATURE_BIN_MS, &params)?;
                    let trajectories = harness::labeled_trajectories(&fit.model, &trials, &labels)?;
                    let attractor = estimate_evoked_attractor(&trajectories, phase_bins)?;
                    file.objects.push(ModelObject::Latent(fit.model.clone()));
                    file.objects.push(ModelObject::Attractor(attractor));
                    Some(fit.model)
                }
                None => None,
            };
            let ex = extract_features(&rec, &prog, latent.as_ref())?;
            let folds = DEFAULT_FOLDS.min(ex.data.len());
            let (m, cv) = train_ridge(&ex.data, &DEFAULT_LAMBDA_GRID, folds, seed)?;
            file.objects.push(ModelObject::Readout(m));
            let path = out_file(out, "model.txt");
            write_file(&path, &model::to_text(&file))?;
            Ok(format!(
                "wrote {} ({} windows, {} dropped, lambda {})\n",
                path.display(),
                ex.data.len(),
                ex.dropped,
                cv.chosen_lambda
            ))
        }
        Command::Test {
            model: model_path,
            spikes: sp,
            program: prog,
            out,
        } => {
            let models = load_models(&model_path)?;
            let readout = models
                .readout()
                .ok_or_else(|| Error::Config("model file holds no readout".into()))?;
            let rec = load_spikes(&sp)?;
            let prog = load_program(&prog)?;
            let ex = extract_features(&rec, &prog, models.latent())?;
            let rounds = rounds_of(&prog);
            let per_round: Vec<LabeledFeatureSet> = rounds
                .iter()
                .map(|&(s, e)| ex.data.time_range(s as f64, e as f64))
                .collect();
            let times: Vec<f64> = rounds.iter().map(|r| r.0 as f64 / 3_600_000.0).collect();
            let tl = accuracy_timeline(readout, &per_round, &times)?;
            let mut text = format!("{} {}\nround_time_h\taccuracy\n", report::TABLE_MAGIC, report::VERSION);
            for (t, a) in tl.round_times_h.iter().zip(&tl.accuracies) {
                text.push_str(&format!("{t:?}\t{a:?}\n"));
            }
            let path = out_file(out, "timeline.tsv");
            write_file(&path, &text)?;
            Ok(text)
        }
        Command::Control {
            program: prog,
            control,
            amplitude_fraction,
            frequency_hz,
            lead_in_ms,
            spikes: sp,
            out,
        } => {
            let prog = load_program(&prog)?;
            let base = ModulationSpec::default();
            let spec = ModulationSpec {
                amplitude_fraction: amplitude_fraction.unwrap_or(base.amplitude_fraction),
                frequency_hz: frequency_hz.unwrap_or(base.frequency_hz),
                lead_in_ms: lead_in_ms.unwrap_or(base.lead_in_ms),
                ..base
            };
            let controlled = match control {
                Switch::On => apply_control(&prog, &spec)?,
                Switch::Off => StimulusProgram {
                    modulation: ModulationSpec::disabled(),
                    ..prog
                },
            };
            let path = out_file(out, "program.txt");
            write_file(&path, &program::to_text(&controlled))?;
            let mut msg = format!("wrote {}\n", path.display());
            if let Some(sp) = sp {
                let rec = load_spikes(&sp)?;
                let e = harness::session_entrainment(&rec, &controlled, 0.0, rec.duration_ms())?;
                msg.push_str(&format!(
                    "burst_count={}\nburst_interval_sd_ms={:?}\nonset_phase_circular_variance={:?}\naligned_fraction={:?}\n",
                    e.burst_count, e.burst_interval_sd, e.onset_phase_circular_variance, e.aligned_fraction
                ));
            }
            Ok(msg)
        }
        Command::Transplant {
            expert,
            student_probes,
            program: prog,
            latent_dim,
            alignment_phase_start,
            out,
        } => {
            let bundle = load_models(&expert)?;
            let (Some(latent), Some(attractor), Some(readout)) = (bundle.latent(), bundle.attractor(), bundle.readout())
            else {
                return Err(Error::Config("expert model file needs latent, attractor and readout objects".into()));
            };
            let ex = Expert {
                latent: latent.clone(),
                attractor: attractor.clone(),
                readout: readout.clone(),
                report: placeholder_report(),
            };
            let rec = load_spikes(&student_probes)?;
            let prog = load_program(&prog)?;
            let q = latent_dim.unwrap_or(latent.latent_dim());
            let expert_id = expert.display().to_string();
            let student_id = student_probes.display().to_string();
            let first = alignment_phase_start.unwrap_or(attractor.labeled_phase_bins / 2);
            let (student_latent, record) =
                harness::transplant_from_probes(&ex, &rec, &prog, q, first, &expert_id, &student_id)?;
            let residual = record.transform.fit_residual;
            let file = ModelFile {
                objects: vec![ModelObject::Latent(student_latent), ModelObject::Transplant(record)],
            };
            let path = out_file(out, "student-model.txt");
            write_file(&path, &model::to_text(&file))?;
            Ok(format!("wrote {} (alignment residual {residual:?})\n", path.display()))
        }
        Command::Run { config, control, out } => {
            let mut cfg = load_config(&config)?;
            match control {
                Some(Switch::On) => {
                    cfg.control.enabled = true;
                    if cfg.protocol == Protocol::NaiveRc {
                        cfg.protocol = Protocol::CcRc;
                    }
                }
                Some(Switch::Off) => cfg.control.enabled = false,
                None => {}
            }
            let dir = output_dir(out.as_deref(), cfg.output_dir.as_deref());
            let reports = harness::run(&cfg)?;
            let mut msg = String::new();
            let names: &[&str] = if reports.len() == 1 { &[""] } else { &["expert", "student"] };
            for (r, name) in reports.iter().zip(names) {
                let d = if name.is_empty() { dir.clone() } else { dir.join(name) };
                for f in [ReportFormat::Text, ReportFormat::Table, ReportFormat::PlotData] {
                    for p in emit_report(r, f, &d)? {
                        msg.push_str(&format!("wrote {}\n", p.display()));
                    }
                }
            }
            Ok(msg)
        }
        Command::Report { input, format, out } => {
            let r = RunReport::from_text(&read_file(&input)?)?;
            let dir = output_dir(out.as_deref(), None);
            let mut msg = String::new();
            for p in emit_report(&r, format.into(), &dir)? {
                msg.push_str(&format!("wrote {}\n", p.display()));
            }
            Ok(msg)
        }
    }
}

fn placeholder_report() -> RunReport {
    RunReport {
        provenance: report::Provenance {
            role: report::RunRole::KtExpert,
            control: true,
            config_hash: String::new(),
            seeds: crate::config::Seeds::from_root(0),
            time_compression: 1.0,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        diagnostics: None,
        training: None,
        entrainment: None,
        transplant: None,
        warnings: Vec::new(),
        timeline: ccrc_core::readout::AccuracyTimeline {
            round_times_h: Vec::new(),
            accuracies: Vec::new(),
        },
        learning_curve: Vec::new(),
        scratch_curve: Vec::new(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => crate::error::EXIT_VALIDATION,
            };
        }
    };
    match execute(cli) {
        Ok(msg) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
