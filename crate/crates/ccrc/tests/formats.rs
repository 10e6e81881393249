use ccrc::error::{Error, EXIT_VALIDATION};
use ccrc::formats::model::{self, ModelFile, ModelObject};
use ccrc::formats::{program, spikes};
use ccrc_core::control::apply_control;
use ccrc_core::encoding::{build_training_program, standard_patterns, ModulationSpec, StimulusProgram};
use ccrc_core::latent::{estimate_evoked_attractor, fit_gpfa_segments, infer_trajectory, GpfaParams, LabeledTrajectory};
use ccrc_core::readout::{fit_ridge, FeatureSpace, LabeledFeatureSet};
use ccrc_core::substrate::{bin_rates, preset, simulate, ActivityType, DriftConfig, FiringRateMatrix, SpikeTrainSet};
use ccrc_core::transplant::{fit_alignment, TransplantRecord};
use nalgebra::DMatrix;

/// Deterministic values with full mantissas.
fn wiggle(i: usize, j: usize) -> f64 {
    ((i * 31 + j * 7) as f64 * 0.7310585).sin() * 3.0 + (j as f64) / 7.0
}

#[test]
fn spike_file_round_trip_is_exact() {
    let p = StimulusProgram::silent(3_000);
    let sp = simulate(&preset(ActivityType::C), &DriftConfig::disabled(), &p, 3_000).unwrap();
    assert!(sp.total_spikes() > 0);
    let text = spikes::to_text(&sp);
    assert!(text.starts_with("ccrc-spikes 1\nchannels=128 duration_ms=3000.0\n"));
    assert_eq!(spikes::from_text(&text).unwrap(), sp);

    let empty = SpikeTrainSet::empty(4, 10.0);
    assert_eq!(spikes::from_text(&spikes::to_text(&empty)).unwrap(), empty);
}

#[test]
fn spike_file_rejects_bad_input() {
    let ok = "ccrc-spikes 1\nchannels=2 duration_ms=10.0\n0\t1.0\n0\t2.0\n1\t0.5\n";
    assert!(spikes::from_text(ok).is_ok());
    let unsorted = "ccrc-spikes 1\nchannels=2 duration_ms=10.0\n1\t0.5\n0\t1.0\n";
    assert!(spikes::from_text(unsorted).is_err());
    let out_of_range = "ccrc-spikes 1\nchannels=2 duration_ms=10.0\n2\t0.5\n";
    assert!(spikes::from_text(out_of_range).is_err());
    let late = "ccrc-spikes 1\nchannels=2 duration_ms=10.0\n0\t10.0\n";
    assert!(spikes::from_text(late).is_err());
    let version = "ccrc-spikes 2\nchannels=2 duration_ms=10.0\n";
    let err = spikes::from_text(version).unwrap_err();
    assert!(matches!(err, Error::Version { .. }));
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
    assert!(spikes::from_text("ccrc-program 1\n").is_err());
}

#[test]
fn program_file_round_trip_is_exact() {
    let set = standard_patterns();
    let base = build_training_program(&set, 25, 4).unwrap();
    let mut p = StimulusProgram::silent(0);
    p.append_shifted(&base, 40_000).unwrap();
    let controlled = apply_control(&p, &ModulationSpec::default()).unwrap();
    for prog in [&base, &controlled] {
        let text = program::to_text(prog);
        assert!(text.starts_with("ccrc-program 1\n"));
        assert_eq!(&program::from_text(&text).unwrap(), prog);
    }
    let text = program::to_text(&controlled);
    assert!(program::from_text(&text.replacen("ccrc-program 1", "ccrc-program 2", 1)).is_err());
    assert!(program::from_text(&text.replacen("span_ms=", "span_ms=-", 1)).is_err());
    assert!(program::from_text(&format!("{text}unexpected=1\n")).is_err());
}

fn bundle() -> ModelFile {
    // Latent model and attractor from a short recording.
    let set = standard_patterns();
    let prog = build_training_program(&set, 30, 2).unwrap();
    let sp = simulate(&preset(ActivityType::C), &DriftConfig::disabled(), &prog, prog.span_ms).unwrap();
    let rates = bin_rates(&sp, 100.0, 0.0).unwrap();
    let trials: Vec<DMatrix<f64>> = prog
        .windows
        .iter()
        .map(|w| rates.values.columns((w.onset_ms / 100) as usize, 10).into_owned())
        .collect();
    let params = GpfaParams {
        latent_dim: 3,
        max_iters: 20,
        ..GpfaParams::default()
    };
    let latent = fit_gpfa_segments(&trials, 100.0, &params).unwrap().model;
    let trajs: Vec<LabeledTrajectory> = trials
        .iter()
        .zip(&prog.windows)
        .map(|(t, w)| LabeledTrajectory {
            label: w.label,
            trajectory: infer_trajectory(
                &latent,
                &FiringRateMatrix {
                    bin_width_ms: 100.0,
                    t0_ms: 0.0,
                    values: t.clone(),
                },
            )
            .unwrap(),
        })
        .collect();
    let attractor = estimate_evoked_attractor(&trajs, 5).unwrap();

    let n = 40;
    let labels: Vec<u8> = (0..n).map(|i| 1 + (i % 4) as u8).collect();
    let x = DMatrix::from_fn(n, 3, wiggle);
    let readout = fit_ridge(&LabeledFeatureSet::new(x, labels, FeatureSpace::Latent(3)).unwrap(), 0.37).unwrap();
    let s = DMatrix::from_fn(12, 3, wiggle);
    let e = DMatrix::from_fn(12, 3, |i, j| wiggle(i, j) * 1.5 - 0.25 + wiggle(j, i) * 0.01);
    let transform = fit_alignment(&s, &e, 1e-3).unwrap();
    let record = TransplantRecord::new(
        "expert:abc".into(),
        "student\twith tab\nand newline".into(),
        &readout,
        transform,
        "trained on 30 windows; 12 points".into(),
    )
    .unwrap();
    let observed = fit_ridge(
        &LabeledFeatureSet::new(DMatrix::from_fn(n, 5, wiggle), (0..n).map(|i| 1 + (i % 3) as u8).collect(), FeatureSpace::ObservedRates(5))
            .unwrap(),
        2.0,
    )
    .unwrap();
    ModelFile {
        objects: vec![
            ModelObject::Latent(latent),
            ModelObject::Attractor(attractor),
            ModelObject::Readout(readout),
            ModelObject::Readout(observed),
            ModelObject::Transplant(record),
        ],
    }
}

#[test]
fn model_file_round_trip_is_bit_exact() {
    let file = bundle();
    let text = model::to_text(&file);
    assert!(text.starts_with("ccrc-model 1\n"));
    let back = model::from_text(&text).unwrap();
    assert_eq!(back, file);
    assert_eq!(model::to_text(&back), text);
    assert!(back.latent().is_some() && back.attractor().is_some() && back.transplant().is_some());

    // One object per file works too, for each kind.
    for obj in &file.objects {
        let single = ModelFile {
            objects: vec![obj.clone()],
        };
        assert_eq!(model::from_text(&model::to_text(&single)).unwrap(), single, "{}", obj.kind());
    }
}

#[test]
fn model_file_rejects_truncation_and_unknown_kinds() {
    let text = model::to_text(&bundle());
    let cut = &text[..text.len() / 2];
    assert!(model::from_text(cut).is_err());
    assert!(model::from_text(&text.replacen("[object latent]", "[object mystery]", 1)).is_err());
    assert!(model::from_text(&text.replacen("ccrc-model 1", "ccrc-model 9", 1)).is_err());
}

#[test]
fn escaping_round_trips() {
    for s in ["plain", "tab\there", "line\nbreak", "back\\slash", "", "\\n literal"] {
        assert_eq!(model::unescape(&model::escape(s)), s);
        assert!(!model::escape(s).contains('\n'));
    }
}
