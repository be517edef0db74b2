mod args;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use peft_lad::config::RunConfig;
use peft_lad::eval::{
    cross_eval, evaluate, inject_protocol, point_seed, resolve_action_words, sequences_checksum,
    sweep_rank, sweep_train_ratio, synthetic, train_seeded, ExperimentReport, ReportRow,
    SynonymLexicon, DEFAULT_STOPLIST, TRAIN_AXIS,
};
use peft_lad::logs::{parse_session_labels, Bundle, DatasetFormat, LogSequence};
use peft_lad::training::{gradient_suite, Checkpoint, EpochRecord, SUITE_TOLERANCE};
use peft_lad::{Error, Result};

use args::{Cli, Command, GlobalArgs};

const BUNDLE_DIR: &str = "bundle";
const CHECKPOINT_DIR: &str = "checkpoint";
const REPORT_DIR: &str = "reports";
const SYNTHETIC_DIR: &str = "synthetic";

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let global = cli.global;
    match cli.command {
        Command::Prepare(a) => {
            let mut cfg = global.load()?;
            a.apply(&mut cfg);
            cfg.validate()?;
            prepare(&cfg)?;
        }
        Command::Train(a) => {
            let cfg = configured(&global, |c| a.apply(c))?;
            train(&cfg)?;
        }
        Command::Eval(a) => {
            let cfg = configured(&global, |_| Ok(()))?;
            let out = cfg.out_dir();
            let ckpt = a.checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_DIR));
            let bundle = a.bundle.unwrap_or_else(|| out.join(BUNDLE_DIR));
            eval(&cfg, &ckpt, &bundle)?;
        }
        Command::SweepRank(a) => {
            let cfg = configured(&global, |c| {
                if let Some(r) = a.ranks {
                    c.sweep.ranks = r;
                }
                a.train.apply(c)
            })?;
            let bundle = load_bundle(&cfg)?;
            let r = sweep_rank(
                &bundle.split,
                &cfg.experiment(),
                &cfg.sweep.ranks,
                cfg.seed()?,
                cfg.jobs(),
            )?;
            finish(&cfg, r)?;
        }
        Command::SweepData(a) => {
            let cfg = configured(&global, |c| {
                if let Some(r) = a.ratios {
                    c.sweep.ratios = r;
                }
                a.train.apply(c)
            })?;
            let bundle = load_bundle(&cfg)?;
            let all: Vec<LogSequence> = bundle.split.all().cloned().collect();
            let r = sweep_train_ratio(
                &all,
                &cfg.experiment(),
                &cfg.sweep.ratios,
                cfg.seed()?,
                cfg.jobs(),
            )?;
            finish(&cfg, r)?;
        }
        Command::Inject(a) => {
            let cfg = configured(&global, |c| {
                if a.train.epochs.is_some() {
                    return Err(Error::config(
                        "inject trains with --inject-epochs, not --epochs",
                    ));
                }
                if a.lexicon.is_some() {
                    c.inject.lexicon = a.lexicon;
                }
                if a.action_words.is_some() {
                    c.inject.action_words = a.action_words;
                }
                if let Some(r) = a.rates {
                    c.inject.rates = r;
                }
                if let Some(e) = a.inject_epochs {
                    c.inject.epochs = e;
                }
                a.train.apply(c)
            })?;
            inject(&cfg)?;
        }
        Command::Cross(a) => {
            let tests = a.tests;
            let cfg = configured(&global, |c| a.train.apply(c))?;
            let bundle = load_bundle(&cfg)?;
            let mut sets = Vec::with_capacity(tests.len());
            for (name, dir) in tests {
                sets.push((name, Bundle::load(&dir)?.split.test));
            }
            let r = cross_eval(&bundle.split.train, &sets, &cfg.experiment(), cfg.seed()?)?;
            for row in r.rows.iter().filter(|r| r.degenerate) {
                eprintln!("warning: {} received a single predicted class", row.axis);
            }
            finish(&cfg, r)?;
        }
        Command::Gradcheck => return gradcheck(),
        Command::GenerateSynthetic(a) => {
            let cfg = configured(&global, |_| Ok(()))?;
            let defaults = synthetic::SyntheticConfig::default();
            let sc = synthetic::SyntheticConfig {
                format: a.format.unwrap_or(defaults.format),
                sequences: a.sequences.unwrap_or(defaults.sequences),
                events_per_sequence: a.events.unwrap_or(defaults.events_per_sequence),
                anomaly_rate: a.rate.unwrap_or(defaults.anomaly_rate),
                burst: a.burst.unwrap_or(defaults.burst),
                seed: cfg.seed()?,
            };
            let log = synthetic::generate(&sc)?;
            let dir = cfg.out_dir().join(SYNTHETIC_DIR);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("log.txt"), &log.raw)?;
            if let Some(csv) = &log.labels_csv {
                fs::write(dir.join("labels.csv"), csv)?;
            }
            println!(
                "wrote {} sequences ({} anomalous) to {}",
                sc.sequences,
                log.anomalous.len(),
                dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Loads the file, applies flags, validates.
fn configured(
    global: &GlobalArgs,
    apply: impl FnOnce(&mut RunConfig) -> Result<()>,
) -> Result<RunConfig> {
    let mut cfg = global.load()?;
    apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_bundle(cfg: &RunConfig) -> Result<Bundle> {
    Bundle::load(&cfg.out_dir().join(BUNDLE_DIR))
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    let d = &cfg.dataset;
    let input = d
        .path
        .as_ref()
        .ok_or_else(|| Error::config("prepare needs --input or dataset.path"))?;
    let labels = match (d.format, &d.labels) {
        (DatasetFormat::Hdfs, None) => {
            return Err(Error::config(
                "hdfs logs need a session label CSV (--labels)",
            ));
        }
        (_, Some(p)) => Some(parse_session_labels(open(p)?)?),
        (_, None) => None,
    };
    let raw = read(input)?;
    let bundle = Bundle::prepare(&raw, d.format, d.grouping(), labels.as_ref(), d.train_ratio)?;
    let dir = cfg.out_dir().join(BUNDLE_DIR);
    bundle.save(&dir)?;
    let m = &bundle.manifest;
    println!("bundle: {}", dir.display());
    println!("fingerprint: {}", cfg.fingerprint()?);
    println!(
        "train: {} normal, {} anomalous",
        m.train.normal, m.train.anomalous
    );
    println!(
        "test: {} normal, {} anomalous",
        m.test.normal, m.test.anomalous
    );
    if m.rejected_lines > 0 || m.invalid_utf8 > 0 {
        println!(
            "skipped: {} malformed lines, {} invalid utf-8",
            m.rejected_lines, m.invalid_utf8
        );
    }
    Ok(())
}

fn open(path: &Path) -> Result<fs::File> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(fs::File::open(path)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

fn epochs_csv(history: &[EpochRecord], fingerprint: &str) -> String {
    let mut s = String::from("epoch,mean_loss,compute_seconds,total_seconds,fingerprint\n");
    for r in history {
        writeln!(
            s,
            "{},{},{},{},{fingerprint}",
            r.epoch, r.mean_loss, r.compute_seconds, r.total_seconds
        )
        .expect("string write");
    }
    s
}

fn train(cfg: &RunConfig) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let fingerprint = cfg.fingerprint()?;
    let seed = point_seed(cfg.seed()?, TRAIN_AXIS);
    let out = train_seeded(&bundle.split.train, &cfg.experiment(), seed)?;
    let dir = cfg.out_dir();
    let ckpt = Checkpoint {
        model: out.model,
        vocab: out.vocab,
        config_hash: fingerprint.clone(),
    };
    ckpt.save(&dir.join(CHECKPOINT_DIR))?;
    fs::write(
        dir.join("epochs.csv"),
        epochs_csv(&out.history, &fingerprint),
    )?;
    let summary = serde_json::json!({
        "fingerprint": fingerprint,
        "seed": seed,
        "init_checksum": out.init_checksum,
        "trainable_checksum": ckpt.model.trainable_checksum(),
        "history": out.history,
    });
    fs::write(
        dir.join("train.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    for r in &out.history {
        println!(
            "epoch {}: loss {:.6} ({:.2}s)",
            r.epoch, r.mean_loss, r.compute_seconds
        );
    }
    println!("checkpoint: {}", dir.join(CHECKPOINT_DIR).display());
    Ok(())
}

fn eval(cfg: &RunConfig, ckpt_dir: &Path, bundle_dir: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_dir)?;
    let bundle = Bundle::load(bundle_dir)?;
    let e = evaluate(&ckpt.model, &ckpt.vocab, &bundle.split.test)?;
    let mut row = ReportRow::new("in-domain", point_seed(cfg.seed()?, TRAIN_AXIS));
    row.metrics = Some(e.metrics);
    row.degenerate = e.degenerate();
    row.init_checksum = None;
    let report = ExperimentReport {
        protocol: "eval".into(),
        fingerprint: ckpt.config_hash.clone(),
        seed: cfg.seed()?,
        test_checksum: Some(sequences_checksum(&bundle.split.test)),
        rows: vec![row],
    };
    finish(cfg, report)
}

fn inject(cfg: &RunConfig) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let lexicon_path = cfg
        .inject
        .lexicon
        .as_ref()
        .ok_or_else(|| Error::config("inject needs --lexicon or inject.lexicon"))?;
    let lexicon = SynonymLexicon::load(lexicon_path)?;
    let texts: Vec<String> = bundle.split.train.iter().map(LogSequence::text).collect();
    let words = resolve_action_words(cfg.inject.action_words.as_deref(), &texts, DEFAULT_STOPLIST)?;
    println!("action words: {}", words.join(", "));
    let mut exp = cfg.experiment();
    exp.train.epochs = cfg.inject.epochs;
    let r = inject_protocol(
        &bundle.split,
        &exp,
        &lexicon,
        &words,
        &cfg.inject.rates,
        cfg.seed()?,
        cfg.jobs(),
    )?;
    finish(cfg, r)
}

/// Stamps the run fingerprint, writes the report and prints a summary.
fn finish(cfg: &RunConfig, mut report: ExperimentReport) -> Result<()> {
    if report.protocol != "eval" {
        report.fingerprint = cfg.fingerprint()?;
    }
    let dir: PathBuf = cfg.out_dir().join(REPORT_DIR);
    let (csv, json) = report.write(&dir)?;
    for row in &report.rows {
        match (&row.metrics, &row.error) {
            (Some(m), _) => println!(
                "{:>10}  p {:.4}  r {:.4}  f1 {:.4}{}",
                row.axis,
                m.precision,
                m.recall,
                m.f1,
                row.f1_change
                    .map(|c| format!("  change {c:+.4}"))
                    .unwrap_or_default()
            ),
            (None, Some(e)) => eprintln!("warning: point {} failed: {e}", row.axis),
            (None, None) => {}
        }
    }
    println!("report: {} and {}", csv.display(), json.display());
    Ok(())
}

fn gradcheck() -> Result<ExitCode> {
    let entries = gradient_suite()?;
    let mut failed = 0;
    for e in &entries {
        let ok = e.passes();
        failed += usize::from(!ok);
        println!(
            "{} {:<12} {:<15} {:<30} {:.3e}",
            if ok { "ok  " } else { "FAIL" },
            e.group,
            format!("{:?}", e.style).to_lowercase(),
            e.parameter,
            e.max_relative_error
        );
    }
    println!(
        "{} checks, {failed} failed (tolerance {SUITE_TOLERANCE:e})",
        entries.len()
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}
