use std::fs;

use ccrc::config::Seeds;
use ccrc::report::{emit_report, Provenance, ReportFormat, RunReport, RunRole, TrainingSummary, TransplantSummary};
use ccrc_core::control::EntrainmentReport;
use ccrc_core::diagnostics::DiagnosticsReport;
use ccrc_core::readout::AccuracyTimeline;
use ccrc_core::substrate::ActivityType;

fn sample(rounds: usize) -> RunReport {
    RunReport {
        provenance: Provenance {
            role: RunRole::Rc,
            control: true,
            config_hash: "0f".repeat(32),
            seeds: Seeds::from_root(9),
            time_compression: 12.0,
            crate_version: "0.1.0".into(),
        },
        diagnostics: Some(DiagnosticsReport {
            type_label: ActivityType::C,
            burst_count: 300,
            burst_rate_hz: 1.0 / 3.0,
            interburst_fraction: 0.7,
            branching_ratio: None,
            kernel_rank: 97,
            generalization_rank: Some(12),
            spectral_radius: 0.93,
            mean_transfer_entropy_bits: 1e-3,
            recording_duration_s: 300.0,
        }),
        training: Some(TrainingSummary {
            windows: 360,
            dropped_windows: 0,
            feature_space: "observed:128".into(),
            ridge_lambda: 259.3,
            cv_accuracy: 0.84,
            holdout_accuracy: None,
        }),
        entrainment: Some(EntrainmentReport {
            burst_interval_variance: 2.5e4,
            burst_interval_sd: 158.1,
            onset_phase_circular_variance: 0.19,
            aligned_fraction: 0.4,
            window_tolerance_ms: 50.0,
            burst_count: 120,
        }),
        transplant: None,
        warnings: vec!["first warning".into(), "second".into()],
        timeline: AccuracyTimeline {
            round_times_h: (0..rounds).map(|r| 0.25 * (r + 2) as f64).collect(),
            accuracies: (0..rounds).map(|r| 0.9 - 0.01 * r as f64 / 3.0).collect(),
        },
        learning_curve: Vec::new(),
        scratch_curve: Vec::new(),
    }
}

fn data_rows(tsv: &str) -> usize {
    tsv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("round_time_h") && !l.starts_with("minutes") && !l.is_empty()).count()
}

#[test]
fn full_horizon_timeline_has_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&sample(47), ReportFormat::Table, dir.path()).unwrap();
    assert_eq!(files.len(), 1);
    let tsv = fs::read_to_string(&files[0]).unwrap();
    assert!(tsv.starts_with("# ccrc-table 1\nround_time_h\taccuracy\n"));
    assert_eq!(data_rows(&tsv), 47);
    for line in tsv.lines().skip(2) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 2);
        cols[0].parse::<f64>().unwrap();
        cols[1].parse::<f64>().unwrap();
    }
}

#[test]
fn empty_learning_curves_are_omitted() {
    let dir = tempfile::tempdir().unwrap();
    let r = sample(4);
    emit_report(&r, ReportFormat::Table, dir.path()).unwrap();
    assert!(!dir.path().join("learning_curve.tsv").exists());
    emit_report(&r, ReportFormat::PlotData, dir.path()).unwrap();
    let plot = fs::read_to_string(dir.path().join("plotdata.tsv")).unwrap();
    assert!(plot.contains("# series timeline"));
    assert!(!plot.contains("learning_curve"));
    assert!(!r.to_text().contains("[learning_curve"));

    let mut kt = r.clone();
    kt.provenance.role = RunRole::KtStudent;
    kt.learning_curve = vec![(0.0, 0.6), (0.5, 0.7)];
    kt.scratch_curve = vec![(0.5, 0.4)];
    kt.transplant = Some(TransplantSummary {
        expert_accuracy: 0.7,
        zero_shot_accuracy: 0.66,
        fit_residual: 3.2,
        probe_count: 60,
        corresponding_points: 50,
        shared_labels: 10,
    });
    let files = emit_report(&kt, ReportFormat::Table, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    let lc = fs::read_to_string(dir.path().join("learning_curve.tsv")).unwrap();
    assert_eq!(data_rows(&lc), 2);
    assert!(lc.contains("minutes\taccuracy"));
}

#[test]
fn reemitting_is_byte_identical() {
    let r = sample(6);
    for format in [ReportFormat::Text, ReportFormat::Table, ReportFormat::PlotData] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = emit_report(&r, format, a.path()).unwrap();
        let fb = emit_report(&r, format, b.path()).unwrap();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        // Writing again into the same directory overwrites with the same bytes.
        let before: Vec<Vec<u8>> = fa.iter().map(|p| fs::read(p).unwrap()).collect();
        emit_report(&r, format, a.path()).unwrap();
        let after: Vec<Vec<u8>> = fa.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(before, after);
    }
}

#[test]
fn text_report_round_trips() {
    let mut r = sample(47);
    assert_eq!(RunReport::from_text(&r.to_text()).unwrap(), r);
    r.diagnostics = None;
    r.entrainment = None;
    r.warnings.clear();
    r.timeline = AccuracyTimeline {
        round_times_h: Vec::new(),
        accuracies: Vec::new(),
    };
    let text = r.to_text();
    assert!(!text.contains("[diagnostics]") && !text.contains("[warnings"));
    assert_eq!(RunReport::from_text(&text).unwrap(), r);
    assert!(RunReport::from_text(&text.replacen("ccrc-report 1", "ccrc-report 3", 1)).is_err());
}

#[test]
fn format_names_parse() {
    assert_eq!(ReportFormat::parse("text").unwrap(), ReportFormat::Text);
    assert_eq!(ReportFormat::parse("table").unwrap(), ReportFormat::Table);
    assert_eq!(ReportFormat::parse("plotdata").unwrap(), ReportFormat::PlotData);
    assert!(ReportFormat::parse("pdf").is_err());
}
