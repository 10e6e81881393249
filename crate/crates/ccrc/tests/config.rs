use ccrc::config::{compressed_rounds, ExperimentConfig, Protocol, Seeds, FULL_TEST_ROUNDS};
use ccrc::error::EXIT_VALIDATION;
use ccrc_core::substrate::{preset, ActivityType};

#[test]
fn text_round_trip_is_exact() {
    for protocol in [Protocol::NaiveRc, Protocol::CcRc, Protocol::Kt] {
        let mut cfg = ExperimentConfig::new(protocol, ActivityType::D, 17).with_compression(6.0);
        cfg.drift.enabled = true;
        cfg.drift.excitability_drift_rate = 0.0004;
        if protocol == Protocol::Kt {
            cfg.kt.permutation_seed = Some(5);
        }
        cfg.output_dir = Some("out/dir".into());
        let text = cfg.to_text();
        assert!(text.starts_with("ccrc-config 1\n"));
        assert_eq!(ExperimentConfig::from_text(&text).unwrap(), cfg, "{protocol:?}");
    }
}

#[test]
fn minimal_file_takes_desk_defaults() {
    let cfg = ExperimentConfig::from_text("ccrc-config 1\nprotocol=cc_rc\npreset=C\nseed=3\n").unwrap();
    assert_eq!(cfg, ExperimentConfig::new(Protocol::CcRc, ActivityType::C, 3));
    assert_eq!(cfg.training_patterns, 360);
    assert!((6.0..=12.0).contains(&cfg.time_compression));
    // The test horizon is between one and two simulated hours.
    let horizon_h = cfg.test.span_ms() as f64 / 3_600_000.0;
    assert!((1.0..=2.0).contains(&horizon_h), "{horizon_h}");
    assert_eq!(cfg.substrate, preset(ActivityType::C));
    assert_eq!(cfg.seeds, Seeds::from_root(3));
    assert!(cfg.control_on());

    let bare = ExperimentConfig::from_text("ccrc-config 1\nprotocol=naive_rc\n").unwrap();
    assert_eq!(bare.preset, None);
    assert!(!bare.control_on());
}

#[test]
fn seed_hierarchy_is_independent_per_stream() {
    let s = Seeds::from_root(1);
    assert_ne!(s.substrate, s.program);
    assert_ne!(s.program, s.folds);
    assert_eq!(s, Seeds::from_root(1));
    assert_ne!(s.substrate, Seeds::from_root(2).substrate);
    // Overriding one stream leaves the others alone.
    let cfg = ExperimentConfig::from_text("ccrc-config 1\nprotocol=naive_rc\nseed=1\nseed.program=99\n").unwrap();
    assert_eq!(cfg.seeds.program, 99);
    assert_eq!(cfg.seeds.substrate, s.substrate);
}

#[test]
fn compression_sets_round_count() {
    assert_eq!(compressed_rounds(1.0), FULL_TEST_ROUNDS);
    assert_eq!(compressed_rounds(12.0), 4);
    assert_eq!(compressed_rounds(6.0), 8);
    let cfg = ExperimentConfig::from_text("ccrc-config 1\nprotocol=naive_rc\ntime_compression=12\n").unwrap();
    assert!(cfg.test.rounds >= 4);
}

#[test]
fn invalid_files_are_validation_errors() {
    let bad = [
        "ccrc-config 2\nprotocol=naive_rc\n",
        "ccrc-setup 1\nprotocol=naive_rc\n",
        "ccrc-config 1\npreset=C\n",
        "ccrc-config 1\nprotocol=magic\n",
        "ccrc-config 1\nprotocol=naive_rc\npreset=Q\n",
        "ccrc-config 1\nprotocol=naive_rc\nunknown.key=1\n",
        "ccrc-config 1\nprotocol=naive_rc\nseed=1\nseed=2\n",
        "ccrc-config 1\nprotocol=naive_rc\ntime_compression=0.5\n",
        "ccrc-config 1\nprotocol=naive_rc\ntraining.patterns=3\n",
        "ccrc-config 1\nprotocol=naive_rc\npreflight.duration_ms=60000\n",
        "ccrc-config 1\nprotocol=naive_rc\ndrift.excitability_drift_rate=-1\n",
        "ccrc-config 1\nprotocol=naive_rc\nsubstrate.neuron_count=0\n",
        "ccrc-config 1\nprotocol=kt\nkt.refine_points=0,10,5\n",
        "ccrc-config 1\nprotocol=kt\nkt.alignment_phase_start=10\n",
        "ccrc-config 1\nprotocol=cc_rc\ncontrol.frequency_hz=-1\n",
        "ccrc-config 1\nprotocol=naive_rc\nseed=abc\n",
    ];
    for text in bad {
        let err = ExperimentConfig::from_text(text).expect_err(text);
        assert_eq!(err.exit_code(), EXIT_VALIDATION, "{text}: {err}");
    }
}

#[test]
fn provenance_ignores_protocol_name_when_control_is_off() {
    let mut naive = ExperimentConfig::new(Protocol::NaiveRc, ActivityType::C, 4);
    let mut cc = ExperimentConfig::new(Protocol::CcRc, ActivityType::C, 4);
    cc.control.enabled = false;
    assert_eq!(naive.provenance_text(), cc.provenance_text());
    cc.control.enabled = true;
    assert_ne!(naive.provenance_text(), cc.provenance_text());
    naive.output_dir = Some("elsewhere".into());
    cc.control.enabled = false;
    assert_eq!(naive.provenance_text(), cc.provenance_text());
}
