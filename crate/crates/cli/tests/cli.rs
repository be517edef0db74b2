use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use peft_lad::config::RunConfig;
use peft_lad::eval::ExperimentReport;
use peft_lad::logs::{Bundle, Grouping};

const TINY: &[&str] = &[
    "--layers",
    "1",
    "--hidden",
    "8",
    "--heads",
    "2",
    "--ffn-dim",
    "16",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn bin(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_peft-lad"));
    c.args(args)
        .env_remove("PEFT_LAD_SEED")
        .env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert_eq!(
        code(&o),
        0,
        "{args:?}\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn tiny(cmd: &str, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_string(), "--out".into(), out.display().to_string()];
    v.extend(TINY.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn synthetic_bundle(out: &Path, sequences: &str) {
    let o = out.display().to_string();
    ok(&[
        "generate-synthetic",
        "--out",
        &o,
        "--sequences",
        sequences,
        "--events",
        "10",
        "--burst",
        "2",
        "--rate",
        "0.1",
    ]);
    let log = out.join("synthetic/log.txt").display().to_string();
    ok(&["prepare", "--out", &o, "--input", &log, "--window", "10"]);
}

#[test]
fn prepare_hdfs_groups_by_session() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().display().to_string();
    let log = fixture("hdfs_sample.log").display().to_string();
    let labels = fixture("hdfs_labels.csv").display().to_string();
    let text = ok(&[
        "prepare", "--out", &o, "--input", &log, "--format", "hdfs", "--labels", &labels,
    ]);
    assert!(text.contains("anomalous"));
    let b = Bundle::load(&dir.path().join("bundle")).unwrap();
    assert_eq!(b.manifest.grouping, Grouping::Session);
    assert_eq!(b.split.len(), 12);
    let anomalous = b.split.all().filter(|s| s.label.is_anomalous()).count();
    assert_eq!(anomalous, 2);
}

#[test]
fn prepare_labeled_lines_in_windows_of_50() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().display().to_string();
    let log = fixture("bgl_sample.log").display().to_string();
    ok(&[
        "prepare",
        "--out",
        &o,
        "--input",
        &log,
        "--format",
        "labeled-lines",
        "--window",
        "50",
    ]);
    let b = Bundle::load(&dir.path().join("bundle")).unwrap();
    assert_eq!(b.manifest.grouping, Grouping::tumbling(50));
    let lens: Vec<usize> = b.split.all().map(|s| s.len()).collect();
    assert_eq!(lens, vec![50, 50, 50, 10]);
    assert!(b.split.all().nth(1).unwrap().label.is_anomalous());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().display().to_string();
    let log = fixture("hdfs_sample.log").display().to_string();
    assert_eq!(
        code(&run(&[
            "prepare", "--out", &o, "--input", &log, "--format", "syslog"
        ])),
        2
    );
    let missing_labels = run(&["prepare", "--out", &o, "--input", &log, "--format", "hdfs"]);
    assert_eq!(code(&missing_labels), 2);
    assert!(String::from_utf8_lossy(&missing_labels.stderr).contains("label"));
    let bad = run(&["train", "--out", &o, "--hidden", "64", "--heads", "5"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("model.hidden"));
    assert_eq!(
        code(&run(&["train", "--out", &o, "--peft", "lora"])),
        2,
        "rank 128 exceeds width 64"
    );
}

#[test]
fn missing_artifacts_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().display().to_string();
    assert_eq!(code(&run(&["eval", "--out", &o])), 3);
    assert_eq!(code(&run(&["train", "--out", &o])), 3);
    assert_eq!(code(&run(&["sweep-rank", "--out", &o])), 3);
    let cfg = dir.path().join("none.json").display().to_string();
    assert_eq!(code(&run(&["train", "--config", &cfg])), 3);
}

#[test]
fn help_lists_defaults() {
    let d = RunConfig::default();
    let help = ok(&["train", "--help"]);
    for needle in [
        format!("[default: {:e}]", d.train.learning_rate),
        format!("[default: {}]", d.train.batch_size),
        format!("[default: {}]", d.train.epochs),
        format!("[default: {}]", d.model.layers),
        format!("[default: {}]", d.model.hidden),
        format!("[default: {}]", d.train.weight_decay),
        "[default: reft]".to_string(),
        "[default: 8 for reft, 128 for lora]".to_string(),
        "[default: 256]".to_string(),
        "--seed".to_string(),
        "--config".to_string(),
    ] {
        assert!(help.contains(&needle), "missing {needle} in\n{help}");
    }
    assert!(ok(&["sweep-rank", "--help"]).contains("[default: 1,2,4,8,16,32,64,128]"));
    assert!(ok(&["inject", "--help"]).contains("[default: 0.01,0.02,0.03,0.05,0.1,0.2,0.3]"));
    assert!(ok(&["sweep-data", "--help"]).contains("[default: 0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8]"));
    for cmd in [
        "prepare",
        "eval",
        "cross",
        "gradcheck",
        "generate-synthetic",
    ] {
        ok(&[cmd, "--help"]);
    }
}

#[test]
fn default_training_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_bundle(dir.path(), "60");
    let args = tiny("train", dir.path(), &["--seed", "5"]);
    ok(&strs(&args));
    let epochs = fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 4, "header plus 3 default epochs");
    let weights = fs::read(dir.path().join("checkpoint/weights.bin")).unwrap();
    let summary = fs::read_to_string(dir.path().join("train.json")).unwrap();
    ok(&strs(&args));
    assert_eq!(
        fs::read(dir.path().join("checkpoint/weights.bin")).unwrap(),
        weights
    );
    let again = fs::read_to_string(dir.path().join("train.json")).unwrap();
    let checks = |s: &str| {
        let v: serde_json::Value = serde_json::from_str(s).unwrap();
        (
            v["fingerprint"].clone(),
            v["trainable_checksum"].clone(),
            v["init_checksum"].clone(),
        )
    };
    assert_eq!(checks(&summary), checks(&again));

    ok(&[
        "eval",
        "--out",
        &dir.path().display().to_string(),
        "--seed",
        "5",
    ]);
    let report: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reports/eval.json")).unwrap())
            .unwrap();
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(report.fingerprint, v["fingerprint"].as_str().unwrap());
    assert_eq!(report.rows[0].metrics.unwrap().total(), 12);
}

#[test]
fn seed_env_and_precedence() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_bundle(dir.path(), "40");
    let cfg_path = dir.path().join("run.json");
    fs::write(
        &cfg_path,
        r#"{"train": {"epochs": 2, "learning_rate": 0.001}}"#,
    )
    .unwrap();
    let cfg = cfg_path.display().to_string();
    let mut args = tiny("train", dir.path(), &["--config", &cfg, "--epochs", "1"]);
    ok(&strs(&args));
    let epochs = fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 2, "flag beats file");

    args.truncate(args.len() - 2);
    let fp = |env: Option<&str>| {
        let mut c = bin(&strs(&args));
        if let Some(s) = env {
            c.env("PEFT_LAD_SEED", s);
        }
        let o = c.output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("train.json")).unwrap())
                .unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("epochs.csv"))
                .unwrap()
                .lines()
                .count(),
            3
        );
        v["fingerprint"].as_str().unwrap().to_string()
    };
    let plain = fp(None);
    let env = fp(Some("9"));
    assert_ne!(plain, env);
    let mut with_flag = args.clone();
    with_flag.extend(["--seed".to_string(), "9".to_string()]);
    ok(&strs(&with_flag));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("train.json")).unwrap()).unwrap();
    assert_eq!(v["fingerprint"].as_str().unwrap(), env);
    let bad = bin(&strs(&args))
        .env("PEFT_LAD_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn rank_sweep_records_failed_points() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_bundle(dir.path(), "40");
    let args = tiny("sweep-rank", dir.path(), &["--epochs", "1", "--jobs", "3"]);
    let o = run(&strs(&args));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let csv = fs::read_to_string(dir.path().join("reports/sweep-rank.csv")).unwrap();
    let axes: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(axes, ["1", "2", "4", "8", "16", "32", "64", "128"]);
    let report: ExperimentReport = serde_json::from_str(
        &fs::read_to_string(dir.path().join("reports/sweep-rank.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        report.failures().count(),
        4,
        "ranks above the width of 8 fail"
    );
    assert_eq!(report.fingerprint.len(), 64);
}

#[test]
fn data_sweep_inject_and_cross() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_bundle(dir.path(), "60");
    let o = dir.path().display().to_string();
    ok(&strs(&tiny(
        "sweep-data",
        dir.path(),
        &["--epochs", "1", "--ratios", "0.4,0.8"],
    )));
    let r: ExperimentReport = serde_json::from_str(
        &fs::read_to_string(dir.path().join("reports/sweep-data.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.test_checksum.is_some());
    assert_eq!(
        code(&run(&strs(&tiny(
            "sweep-data",
            dir.path(),
            &["--ratios", "0.9"]
        )))),
        2
    );

    let lexicon = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/lexicon.csv");
    let lex = lexicon.display().to_string();
    let words = "open,close,read,write,send,receive,start,stop,connect,allocate";
    ok(&strs(&tiny(
        "inject",
        dir.path(),
        &[
            "--lexicon",
            &lex,
            "--action-words",
            words,
            "--rates",
            "0.1,0.5",
        ],
    )));
    let r: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reports/inject.json")).unwrap())
            .unwrap();
    assert_eq!(
        r.rows.iter().map(|r| r.axis.as_str()).collect::<Vec<_>>(),
        ["0", "0.1", "0.5"]
    );
    assert!(r.rows[1].f1_change.is_some());
    assert_eq!(
        code(&run(&strs(&tiny(
            "inject",
            dir.path(),
            &["--lexicon", &lex, "--epochs", "2"]
        )))),
        2
    );

    let bundle = dir.path().join("bundle").display().to_string();
    let self_test = format!("self={bundle}");
    ok(&strs(&tiny(
        "cross",
        dir.path(),
        &["--epochs", "1", "--test", &self_test],
    )));
    let cross: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reports/cross.json")).unwrap())
            .unwrap();
    assert_eq!(cross.rows[0].axis, "self");
    assert_eq!(code(&run(&["cross", "--out", &o, "--test", "oops"])), 2);
}

#[test]
fn gradcheck_passes() {
    let text = ok(&["gradcheck"]);
    assert!(text.contains(", 0 failed"), "{text}");
}
