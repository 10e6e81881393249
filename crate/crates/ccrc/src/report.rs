// SPDX-License-Identifier: Apache-2.0

//! Run reports: the canonical text form, tab-separated tables and plot data.
//!
//! Canonical text (`report.txt`):
//!
//! ```text
//! ccrc-report 1
//! [provenance]      key=value
//! [diagnostics]     key=value, optional
//! [training]        key=value, optional
//! [entrainment]     key=value, only when control was on
//! [transplant]      key=value, KT student only
//! [warnings <n>]    one line each
//! [timeline <n>]    header row, then round_time_h\taccuracy rows
//! [learning_curve <n>]   minutes\taccuracy, KT student only
//! [scratch_curve <n>]    minutes\taccuracy, KT student only
//! ```
//!
//! Optional values print as `-` when absent. Empty tables and absent blocks
//! are omitted.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ccrc_core::control::EntrainmentReport;
use ccrc_core::diagnostics::DiagnosticsReport;
use ccrc_core::readout::AccuracyTimeline;
use ccrc_core::substrate::ActivityType;

use crate::config::Seeds;
use crate::error::{Error, Result};
use crate::text::{real, write_file, Cursor, KeyValues};

pub const MAGIC: &str = "ccrc-report";
pub const VERSION: u32 = 1;
pub const TABLE_MAGIC: &str = "# ccrc-table";
pub const PLOT_MAGIC: &str = "# ccrc-plotdata";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunRole {
    /// Naive or chaos-controlled reservoir computing run.
    Rc,
    KtExpert,
    KtStudent,
}

impl RunRole {
    fn as_str(self) -> &'static str {
        match self {
            RunRole::Rc => "rc",
            RunRole::KtExpert => "kt_expert",
            RunRole::KtStudent => "kt_student",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "rc" => Some(RunRole::Rc),
            "kt_expert" => Some(RunRole::KtExpert),
            "kt_student" => Some(RunRole::KtStudent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub role: RunRole,
    pub control: bool,
    /// SHA-256 of the configuration's provenance text.
    pub config_hash: String,
    pub seeds: Seeds,
    pub time_compression: f64,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub windows: usize,
    pub dropped_windows: usize,
    /// `observed:<d>` or `latent:<d>`.
    pub feature_space: String,
    pub ridge_lambda: f64,
    pub cv_accuracy: f64,
    /// Accuracy on held-out windows of the same session, when there are any.
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransplantSummary {
    pub expert_accuracy: f64,
    pub zero_shot_accuracy: f64,
    pub fit_residual: f64,
    pub probe_count: usize,
    pub corresponding_points: usize,
    pub shared_labels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub provenance: Provenance,
    pub diagnostics: Option<DiagnosticsReport>,
    pub training: Option<TrainingSummary>,
    pub entrainment: Option<EntrainmentReport>,
    pub transplant: Option<TransplantSummary>,
    pub warnings: Vec<String>,
    pub timeline: AccuracyTimeline,
    /// (minutes of refinement data, accuracy)
    pub learning_curve: Vec<(f64, f64)>,
    pub scratch_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Table,
    PlotData,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "table" => Ok(ReportFormat::Table),
            "plotdata" => Ok(ReportFormat::PlotData),
            _ => Err(Error::Config(format!("unknown report format '{s}'"))),
        }
    }
}

fn opt_real(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), real)
}

/// Flat key/value block of a diagnostics report.
pub fn diagnostics_block(d: &DiagnosticsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "type={}", d.type_label);
    let _ = writeln!(out, "burst_count={}", d.burst_count);
    let _ = writeln!(out, "burst_rate_hz={}", real(d.burst_rate_hz));
    let _ = writeln!(out, "interburst_fraction={}", real(d.interburst_fraction));
    let _ = writeln!(out, "branching_ratio={}", opt_real(d.branching_ratio));
    let _ = writeln!(out, "kernel_rank={}", d.kernel_rank);
    let _ = writeln!(
        out,
        "generalization_rank={}",
        d.generalization_rank.map_or_else(|| "-".into(), |g| g.to_string())
    );
    let _ = writeln!(out, "spectral_radius={}", real(d.spectral_radius));
    let _ = writeln!(out, "mean_transfer_entropy_bits={}", real(d.mean_transfer_entropy_bits));
    let _ = writeln!(out, "recording_duration_s={}", real(d.recording_duration_s));
    out
}

fn read_diagnostics(kv: &mut KeyValues) -> Result<DiagnosticsReport> {
    let opt_f = |kv: &mut KeyValues, k: &str| -> Result<Option<f64>> {
        let s: String = kv.req(k)?;
        if s == "-" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Config(format!("bad {k} '{s}'")))
        }
    };
    let type_label = ActivityType::parse(&kv.req::<String>("type")?)?;
    let branching_ratio = opt_f(kv, "branching_ratio")?;
    let generalization_rank = opt_f(kv, "generalization_rank")?.map(|g| g as usize);
    Ok(DiagnosticsReport {
        type_label,
        burst_count: kv.req("burst_count")?,
        burst_rate_hz: kv.req("burst_rate_hz")?,
        interburst_fraction: kv.req("interburst_fraction")?,
        branching_ratio,
        kernel_rank: kv.req("kernel_rank")?,
        generalization_rank,
        spectral_radius: kv.req("spectral_radius")?,
        mean_transfer_entropy_bits: kv.req("mean_transfer_entropy_bits")?,
        recording_duration_s: kv.req("recording_duration_s")?,
    })
}

fn write_curve(out: &mut String, name: &str, x: &str, points: &[(f64, f64)]) {
    if points.is_empty() {
        return;
    }
    let _ = writeln!(out, "[{name} {}]", points.len());
    let _ = writeln!(out, "{x}\taccuracy");
    for (a, b) in points {
        let _ = writeln!(out, "{}\t{}", real(*a), real(*b));
    }
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        let p = &self.provenance;
        out.push_str("[provenance]\n");
        let _ = writeln!(out, "role={}", p.role.as_str());
        let _ = writeln!(out, "control={}", if p.control { "on" } else { "off" });
        let _ = writeln!(out, "config_hash={}", p.config_hash);
        let _ = writeln!(out, "seed.root={}", p.seeds.root);
        let _ = writeln!(out, "seed.substrate={}", p.seeds.substrate);
        let _ = writeln!(out, "seed.program={}", p.seeds.program);
        let _ = writeln!(out, "seed.folds={}", p.seeds.folds);
        let _ = writeln!(out, "time_compression={}", real(p.time_compression));
        let _ = writeln!(out, "version.ccrc={}", p.crate_version);
        let _ = writeln!(out, "version.report={VERSION}");
        if let Some(d) = &self.diagnostics {
            out.push_str("[diagnostics]\n");
            out.push_str(&diagnostics_block(d));
        }
        if let Some(t) = &self.training {
            out.push_str("[training]\n");
            let _ = writeln!(out, "windows={}", t.windows);
            let _ = writeln!(out, "dropped_windows={}", t.dropped_windows);
            let _ = writeln!(out, "feature_space={}", t.feature_space);
            let _ = writeln!(out, "ridge_lambda={}", real(t.ridge_lambda));
            let _ = writeln!(out, "cv_accuracy={}", real(t.cv_accuracy));
            let _ = writeln!(out, "holdout_accuracy={}", opt_real(t.holdout_accuracy));
        }
        if let Some(e) = &self.entrainment {
            out.push_str("[entrainment]\n");
            let _ = writeln!(out, "burst_count={}", e.burst_count);
            let _ = writeln!(out, "burst_interval_variance_ms2={}", real(e.burst_interval_variance));
            let _ = writeln!(out, "burst_interval_sd_ms={}", real(e.burst_interval_sd));
            let _ = writeln!(out, "onset_phase_circular_variance={}", real(e.onset_phase_circular_variance));
            let _ = writeln!(out, "aligned_fraction={}", real(e.aligned_fraction));
            let _ = writeln!(out, "window_tolerance_ms={}", real(e.window_tolerance_ms));
        }
        if let Some(t) = &self.transplant {
            out.push_str("[transplant]\n");
            let _ = writeln!(out, "expert_accuracy={}", real(t.expert_accuracy));
            let _ = writeln!(out, "zero_shot_accuracy={}", real(t.zero_shot_accuracy));
            let _ = writeln!(out, "fit_residual={}", real(t.fit_residual));
            let _ = writeln!(out, "probe_count={}", t.probe_count);
            let _ = writeln!(out, "corresponding_points={}", t.corresponding_points);
            let _ = writeln!(out, "shared_labels={}", t.shared_labels);
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(out, "[warnings {}]", self.warnings.len());
            for w in &self.warnings {
                let _ = writeln!(out, "{}", crate::formats::model::escape(w));
            }
        }
        let tl: Vec<(f64, f64)> = self
            .timeline
            .round_times_h
            .iter()
            .copied()
            .zip(self.timeline.accuracies.iter().copied())
            .collect();
        write_curve(&mut out, "timeline", "round_time_h", &tl);
        write_curve(&mut out, "learning_curve", "minutes", &self.learning_curve);
        write_curve(&mut out, "scratch_curve", "minutes", &self.scratch_curve);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cur = Cursor::new("report file", text);
        cur.expect_magic(MAGIC, VERSION)?;
        cur.expect_line("[provenance]")?;
        let mut kv = cur.key_values()?;
        let role_s: String = kv.req("role")?;
        let role = RunRole::parse(&role_s).ok_or_else(|| Error::Config(format!("unknown role '{role_s}'")))?;
        let control = match kv.req::<String>("control")?.as_str() {
            "on" => true,
            "off" => false,
            other => return Err(Error::Config(format!("bad control '{other}'"))),
        };
        let version: u32 = kv.req("version.report")?;
        if version != VERSION {
            return Err(Error::Version {
                what: "report file",
                expected: VERSION,
                found: version,
            });
        }
        let provenance = Provenance {
            role,
            control,
            config_hash: kv.req("config_hash")?,
            seeds: Seeds {
                root: kv.req("seed.root")?,
                substrate: kv.req("seed.substrate")?,
                program: kv.req("seed.program")?,
                folds: kv.req("seed.folds")?,
            },
            time_compression: kv.req("time_compression")?,
            crate_version: kv.req("version.ccrc")?,
        };
        kv.finish()?;
        let mut report = RunReport {
            provenance,
            diagnostics: None,
            training: None,
            entrainment: None,
            transplant: None,
            warnings: Vec::new(),
            timeline: AccuracyTimeline {
                round_times_h: Vec::new(),
                accuracies: Vec::new(),
            },
            learning_curve: Vec::new(),
            scratch_curve: Vec::new(),
        };
        while let Some(header) = cur.next() {
            let inner = header
                .strip_prefix('[')
                .and_then(|h| h.strip_suffix(']'))
                .ok_or_else(|| cur.err(format!("expected a section header, found '{header}'")))?;
            let (name, count) = match inner.split_once(' ') {
                Some((n, c)) => (n, Some(c.parse::<usize>().map_err(|_| cur.err("bad section size"))?)),
                None => (inner, None),
            };
            match (name, count) {
                ("diagnostics", None) => {
                    let mut kv = cur.key_values()?;
                    report.diagnostics = Some(read_diagnostics(&mut kv)?);
                    kv.finish()?;
                }
                ("training", None) => {
                    let mut kv = cur.key_values()?;
                    let holdout: String = kv.req("holdout_accuracy")?;
                    let holdout_accuracy = if holdout == "-" {
                        None
                    } else {
                        Some(holdout.parse().map_err(|_| cur.err("bad holdout_accuracy"))?)
                    };
                    report.training = Some(TrainingSummary {
                        holdout_accuracy,
                        windows: kv.req("windows")?,
                        dropped_windows: kv.req("dropped_windows")?,
                        feature_space: kv.req("feature_space")?,
                        ridge_lambda: kv.req("ridge_lambda")?,
                        cv_accuracy: kv.req("cv_accuracy")?,
                    });
                    kv.finish()?;
                }
                ("entrainment", None) => {
                    let mut kv = cur.key_values()?;
                    report.entrainment = Some(EntrainmentReport {
                        burst_count: kv.req("burst_count")?,
                        burst_interval_variance: kv.req("burst_interval_variance_ms2")?,
                        burst_interval_sd: kv.req("burst_interval_sd_ms")?,
                        onset_phase_circular_variance: kv.req("onset_phase_circular_variance")?,
                        aligned_fraction: kv.req("aligned_fraction")?,
                        window_tolerance_ms: kv.req("window_tolerance_ms")?,
                    });
                    kv.finish()?;
                }
                ("transplant", None) => {
                    let mut kv = cur.key_values()?;
                    report.transplant = Some(TransplantSummary {
                        expert_accuracy: kv.req("expert_accuracy")?,
                        zero_shot_accuracy: kv.req("zero_shot_accuracy")?,
                        fit_residual: kv.req("fit_residual")?,
                        probe_count: kv.req("probe_count")?,
                        corresponding_points: kv.req("corresponding_points")?,
                        shared_labels: kv.req("shared_labels")?,
                    });
                    kv.finish()?;
                }
                ("warnings", Some(n)) => {
                    for _ in 0..n {
                        report
                            .warnings
                            .push(crate::formats::model::unescape(cur.next_required("a warning")?));
                    }
                }
                ("timeline", Some(n)) => {
                    cur.expect_line("round_time_h\taccuracy")?;
                    for _ in 0..n {
                        let r: Vec<f64> = cur.row(2)?;
                        report.timeline.round_times_h.push(r[0]);
                        report.timeline.accuracies.push(r[1]);
                    }
                }
                ("learning_curve", Some(n)) | ("scratch_curve", Some(n)) => {
                    cur.expect_line("minutes\taccuracy")?;
                    let mut pts = Vec::with_capacity(n);
                    for _ in 0..n {
                        let r: Vec<f64> = cur.row(2)?;
                        pts.push((r[0], r[1]));
                    }
                    if name == "learning_curve" {
                        report.learning_curve = pts;
                    } else {
                        report.scratch_curve = pts;
                    }
                }
                _ => return Err(cur.err(format!("unknown section '{header}'"))),
            }
        }
        Ok(report)
    }

    fn timeline_points(&self) -> Vec<(f64, f64)> {
        self.timeline
            .round_times_h
            .iter()
            .copied()
            .zip(self.timeline.accuracies.iter().copied())
            .collect()
    }
}

fn table(x: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("{TABLE_MAGIC} {VERSION}\n{x}\taccuracy\n");
    for (a, b) in points {
        let _ = writeln!(out, "{}\t{}", real(*a), real(*b));
    }
    out
}

/// Writes `report` under `dir` in the requested format and returns the paths written.
///
/// * text: `report.txt`
/// * table: `timeline.tsv`, plus `learning_curve.tsv` and `scratch_curve.tsv` when non-empty
/// * plotdata: `plotdata.tsv`, one `# series <name>` block per non-empty series, blank-line separated
pub fn emit_report(report: &RunReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    let series = [
        ("timeline", "round_time_h", report.timeline_points()),
        ("learning_curve", "minutes", report.learning_curve.clone()),
        ("scratch_curve", "minutes", report.scratch_curve.clone()),
    ];
    match format {
        ReportFormat::Text => put("report.txt", report.to_text())?,
        ReportFormat::Table => {
            put("timeline.tsv", table("round_time_h", &series[0].2))?;
            for (name, x, pts) in &series[1..] {
                if !pts.is_empty() {
                    put(&format!("{name}.tsv"), table(x, pts))?;
                }
            }
        }
        ReportFormat::PlotData => {
            let mut out = format!("{PLOT_MAGIC} {VERSION}\n");
            let mut first = true;
            for (name, x, pts) in &series {
                if pts.is_empty() {
                    continue;
                }
                if !first {
                    out.push('\n');
                }
                first = false;
                let _ = writeln!(out, "# series {name}\n# {x}\taccuracy");
                for (a, b) in pts {
                    let _ = writeln!(out, "{}\t{}", real(*a), real(*b));
                }
            }
            put("plotdata.tsv", out)?;
        }
    }
    Ok(written)
}
