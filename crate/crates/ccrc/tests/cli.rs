use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ccrc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccrc"))
        .args(args)
        .current_dir(dir)
        .env_remove("CCRC_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = ccrc(args, dir);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    ccrc(args, dir).status.code().unwrap()
}

const SHORT_RUN: &str = "ccrc-config 1
protocol=naive_rc
preset=C
seed=2
preflight.duration_ms=0
training.patterns=40
test.rounds=2
test.patterns_per_round=20
test.round_rest_ms=5000
test.initial_rest_ms=5000
";

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&["--help"], d), 0);
    assert_eq!(code(&["--version"], d), 0);
    assert_eq!(code(&[], d), 2);
    assert_eq!(code(&["frobnicate"], d), 2);
    assert_eq!(code(&["run", "--config", "missing.txt"], d), 2);
    fs::write(d.join("bad.txt"), "ccrc-config 7\nprotocol=naive_rc\n").unwrap();
    assert_eq!(code(&["run", "--config", "bad.txt"], d), 2);
    fs::write(d.join("bad.txt"), "ccrc-config 1\nprotocol=naive_rc\ntime_compression=0\n").unwrap();
    assert_eq!(code(&["run", "--config", "bad.txt"], d), 2);
    assert_eq!(code(&["run", "--config", "bad.txt", "--control", "maybe"], d), 2);
    // Output under a regular file cannot be created: a runtime failure.
    fs::write(d.join("blocker"), "").unwrap();
    assert_eq!(code(&["program", "--kind", "training", "--count", "5", "--out", "blocker/p.txt"], d), 3);
}

#[test]
fn output_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.txt"), SHORT_RUN).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ccrc"))
        .args(["run", "--config", "run.txt"])
        .current_dir(d)
        .env("CCRC_OUTPUT_DIR", d.join("env-out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.txt", "timeline.tsv", "plotdata.tsv"] {
        assert!(d.join("env-out").join(f).is_file(), "{f}");
    }
    assert!(!d.join("env-out/learning_curve.tsv").exists());

    // Without the variable the fallback directory is used; --out wins over both.
    ok(&["run", "--config", "run.txt", "--control", "on", "--out", "explicit"], d);
    let cc = fs::read_to_string(d.join("explicit/report.txt")).unwrap();
    assert!(cc.contains("control=on"));
    ok(&["run", "--config", "run.txt", "--control", "off"], d);
    let naive = fs::read(d.join("env-out/report.txt")).unwrap();
    assert_eq!(fs::read(d.join("ccrc-out/report.txt")).unwrap(), naive);

    // Re-emitting the saved report reproduces the table bytes.
    ok(&["report", "--input", "ccrc-out/report.txt", "--format", "table", "--out", "again"], d);
    assert_eq!(
        fs::read(d.join("again/timeline.tsv")).unwrap(),
        fs::read(d.join("ccrc-out/timeline.tsv")).unwrap()
    );
}

#[test]
fn single_stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["program", "--kind", "training", "--count", "80", "--seed", "3", "--start-ms", "2000", "--out", "train.txt"], d);
    assert!(fs::read_to_string(d.join("train.txt")).unwrap().starts_with("ccrc-program 1\n"));
    ok(&["simulate", "--preset", "C", "--program", "train.txt", "--out", "train-spikes.txt"], d);
    assert!(fs::read_to_string(d.join("train-spikes.txt")).unwrap().starts_with("ccrc-spikes 1\n"));

    ok(&["train", "--spikes", "train-spikes.txt", "--program", "train.txt", "--out", "observed.txt"], d);
    ok(
        &["train", "--spikes", "train-spikes.txt", "--program", "train.txt", "--latent-dim", "4", "--out", "expert.txt"],
        d,
    );
    let expert = fs::read_to_string(d.join("expert.txt")).unwrap();
    assert!(expert.starts_with("ccrc-model 1\n"));
    assert!(expert.contains("[object latent]") && expert.contains("[object attractor]"));

    ok(&["program", "--kind", "test", "--count", "20", "--rounds", "2", "--seed", "4", "--out", "test.txt"], d);
    ok(&["simulate", "--preset", "C", "--program", "test.txt", "--out", "test-spikes.txt"], d);
    ok(&["test", "--model", "observed.txt", "--spikes", "test-spikes.txt", "--program", "test.txt", "--out", "tl.tsv"], d);
    let tl = fs::read_to_string(d.join("tl.tsv")).unwrap();
    assert!(tl.starts_with("# ccrc-table 1\n"));
    assert_eq!(tl.lines().count(), 2 + 2);

    ok(&["control", "--program", "train.txt", "--control", "on", "--out", "controlled.txt"], d);
    let controlled = fs::read_to_string(d.join("controlled.txt")).unwrap();
    assert!(controlled.contains("modulation.enabled=true"));
    ok(&["control", "--program", "controlled.txt", "--control", "off", "--out", "plain.txt"], d);
    // Control changes only the modulation keys, never the window and event tables.
    let tables = |f: &str| -> Vec<String> {
        let text = fs::read_to_string(d.join(f)).unwrap();
        text.lines().skip_while(|l| !l.starts_with("[windows")).map(String::from).collect()
    };
    assert!(tables("train.txt").len() > 80);
    assert_eq!(tables("plain.txt"), tables("train.txt"));
    assert_eq!(tables("controlled.txt"), tables("train.txt"));
    ok(&["simulate", "--preset", "C", "--program", "controlled.txt", "--out", "cc-spikes.txt"], d);
    let ent = ok(&["control", "--program", "controlled.txt", "--spikes", "cc-spikes.txt", "--out", "c2.txt"], d);
    assert!(ent.contains("circular_variance"), "{ent}");

    // The same network seen through different electrodes as a transplant student.
    ok(&["program", "--kind", "training", "--count", "60", "--seed", "5", "--start-ms", "2000", "--out", "probes.txt"], d);
    ok(&["simulate", "--preset", "C", "--program", "probes.txt", "--out", "probe-spikes.txt"], d);
    ok(
        &["transplant", "--expert", "expert.txt", "--student-probes", "probe-spikes.txt", "--program", "probes.txt", "--out", "student.txt"],
        d,
    );
    let student = fs::read_to_string(d.join("student.txt")).unwrap();
    assert!(student.contains("[object transplant]"));
    // A model without an attractor is not an expert bundle.
    assert_eq!(
        code(&["transplant", "--expert", "observed.txt", "--student-probes", "probe-spikes.txt", "--program", "probes.txt"], d),
        2
    );
}

#[test]
fn diagnose_spontaneous_recording() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["simulate", "--preset", "D", "--duration-ms", "300000", "--out", "spont.txt"], d);
    let text = ok(&["diagnose", "--spikes", "spont.txt", "--out", "diag.txt"], d);
    assert!(text.contains("type=D"), "{text}");
    assert_eq!(fs::read_to_string(d.join("diag.txt")).unwrap(), text);
    // Too short for categorization.
    ok(&["simulate", "--preset", "D", "--duration-ms", "1000", "--out", "short.txt"], d);
    assert_eq!(code(&["diagnose", "--spikes", "short.txt"], d), 2);
}
