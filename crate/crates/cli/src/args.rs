use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use peft_lad::config::RunConfig;
use peft_lad::logs::{DatasetFormat, Grouping};
use peft_lad::model::{Activation, ModelStyle, NormPlacement};
use peft_lad::peft::{LoraConfig, PeftConfig, Position, ReftConfig, Target};
use peft_lad::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "peft-lad",
    version,
    about = "LoRA and ReFT fine-tuning of a small transformer for log anomaly detection",
    after_help = "Precedence: flags > --config file > defaults. PEFT_LAD_SEED replaces the default seed.\n\
                  Exit codes: 0 ok, 2 configuration or usage, 3 missing artifact, 4 numeric failure."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    /// JSON run configuration
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory every artifact is written under [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrent sweep points [default: 1]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse, group and split a raw log into a dataset bundle at <out>/bundle
    Prepare(PrepareArgs),
    /// Fit a model on the bundle and write <out>/checkpoint plus <out>/epochs.csv
    Train(TrainArgs),
    /// Score the bundle's test split with a checkpoint
    Eval(EvalArgs),
    /// One training run per PEFT rank
    SweepRank(SweepRankArgs),
    /// One training run per training-set share, test set fixed to the last 20%
    SweepData(SweepDataArgs),
    /// Synonym substitution of action words at several rates
    Inject(InjectArgs),
    /// Train once, score other prepared bundles
    Cross(CrossArgs),
    /// Finite-difference check of every trainable path
    Gradcheck,
    /// Write a seeded synthetic log to <out>/synthetic
    GenerateSynthetic(SynthArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Raw log file
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// hdfs or labeled-lines [default: labeled-lines]
    #[arg(long, value_parser = parse_format)]
    pub format: Option<DatasetFormat>,
    /// Session label CSV (BlockId,Label), required for hdfs
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// Events per window [default: 50; hdfs groups by session]
    #[arg(long, conflicts_with = "session")]
    pub window: Option<usize>,
    /// Window stride [default: window size]
    #[arg(long, requires = "window")]
    pub stride: Option<usize>,
    /// Group by session key
    #[arg(long)]
    pub session: bool,
    /// Chronological share used for training [default: 0.8]
    #[arg(long, value_name = "RATIO")]
    pub split: Option<f64>,
}

fn parse_format(s: &str) -> std::result::Result<DatasetFormat, String> {
    s.parse::<DatasetFormat>().map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Lora,
    Reft,
    None,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// masked or autoregressive [default: masked]
    #[arg(long, value_parser = parse_style)]
    pub style: Option<ModelStyle>,
    /// Transformer blocks [default: 2]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hidden width [default: 64]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Attention heads [default: 4]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Feed-forward width [default: 256]
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Token limit per sequence, CLS included [default: 256]
    #[arg(long)]
    pub max_len: Option<usize>,
    /// pre or post block normalisation [default: pre]
    #[arg(long, value_parser = parse_norm)]
    pub norm: Option<NormPlacement>,
    /// gelu or relu [default: gelu]
    #[arg(long, value_parser = parse_activation)]
    pub activation: Option<Activation>,
    /// Dropout probability [default: 0]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adapter method [default: reft]
    #[arg(long, value_enum)]
    pub peft: Option<Method>,
    /// Adapter rank [default: 8 for reft, 128 for lora]
    #[arg(long)]
    pub rank: Option<usize>,
    /// LoRA alpha [default: 256]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// LoRA target projections, comma separated [default: query,value]
    #[arg(long, value_delimiter = ',', value_parser = parse_target)]
    pub targets: Option<Vec<Target>>,
    /// Adapted layers, comma separated [default: all]
    #[arg(long, value_delimiter = ',')]
    pub peft_layers: Option<Vec<usize>>,
    /// ReFT position, prefix or suffix [default: prefix for masked, suffix for autoregressive]
    #[arg(long, value_parser = parse_position)]
    pub position: Option<Position>,
    /// Training epochs [default: 3]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// AdamW learning rate [default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Sequences per batch [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Decoupled weight decay [default: 0.01]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Minimum training count for a vocabulary token [default: 1]
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory [default: <out>/checkpoint]
    #[arg(long, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    /// Bundle directory [default: <out>/bundle]
    #[arg(long, value_name = "DIR")]
    pub bundle: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepRankArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Ranks, ascending and comma separated [default: 1,2,4,8,16,32,64,128]
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct SweepDataArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Training shares, comma separated [default: 0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8]
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    /// Training epochs come from --inject-epochs here
    #[command(flatten)]
    pub train: TrainArgs,
    /// Synonym lexicon CSV (word,syn1[,syn2[,syn3]])
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Ten action words, comma separated [default: most frequent in training text]
    #[arg(long, value_delimiter = ',')]
    pub action_words: Option<Vec<String>>,
    /// Injection rates, comma separated [default: 0.01,0.02,0.03,0.05,0.1,0.2,0.3]
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    /// Training epochs for this protocol [default: 1]
    #[arg(long)]
    pub inject_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CrossArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Test bundle as NAME=DIR; its test split is scored (repeatable)
    #[arg(long = "test", value_name = "NAME=DIR", value_parser = parse_named, required = true)]
    pub tests: Vec<(String, PathBuf)>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// hdfs or labeled-lines [default: labeled-lines]
    #[arg(long, value_parser = parse_format)]
    pub format: Option<DatasetFormat>,
    /// Windows or sessions [default: 5000]
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Events per window or session [default: 50]
    #[arg(long)]
    pub events: Option<usize>,
    /// Share of sequences with a planted burst [default: 0.05]
    #[arg(long)]
    pub rate: Option<f64>,
    /// Anomalous events per burst [default: 5]
    #[arg(long)]
    pub burst: Option<usize>,
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => {
            Ok((name.to_string(), PathBuf::from(dir)))
        }
        _ => Err(format!("expected NAME=DIR, got `{s}`")),
    }
}

fn serde_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown value `{s}`"))
}

fn parse_style(s: &str) -> std::result::Result<ModelStyle, String> {
    serde_enum(s)
}

fn parse_norm(s: &str) -> std::result::Result<NormPlacement, String> {
    serde_enum(s)
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    serde_enum(s)
}

fn parse_position(s: &str) -> std::result::Result<Position, String> {
    serde_enum(s)
}

fn parse_target(s: &str) -> std::result::Result<Target, String> {
    serde_enum(s)
}

impl GlobalArgs {
    /// File values (or defaults) with the global flags on top.
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl TrainArgs {
    pub fn apply(self, cfg: &mut RunConfig) -> Result<()> {
        let m = &mut cfg.model;
        set(&mut m.style, self.style);
        set(&mut m.layers, self.layers);
        set(&mut m.hidden, self.hidden);
        set(&mut m.heads, self.heads);
        set(&mut m.ffn_dim, self.ffn_dim);
        set(&mut m.max_len, self.max_len);
        set(&mut m.norm, self.norm);
        set(&mut m.activation, self.activation);
        set(&mut m.dropout, self.dropout);

        match (self.peft, cfg.peft.method()) {
            (Some(Method::Lora), m) if m != "lora" => {
                cfg.peft = PeftConfig::Lora(LoraConfig::default())
            }
            (Some(Method::Reft), m) if m != "reft" => {
                cfg.peft = PeftConfig::Reft(ReftConfig::default())
            }
            (Some(Method::None), _) => cfg.peft = PeftConfig::None,
            _ => {}
        }
        match &mut cfg.peft {
            PeftConfig::Lora(l) => {
                set(&mut l.rank, self.rank);
                set(&mut l.alpha, self.alpha);
                set(&mut l.targets, self.targets);
                if self.peft_layers.is_some() {
                    l.layers = self.peft_layers;
                }
                if self.position.is_some() {
                    return Err(Error::config("--position applies to reft only"));
                }
            }
            PeftConfig::Reft(r) => {
                set(&mut r.rank, self.rank);
                if self.peft_layers.is_some() {
                    r.layers = self.peft_layers;
                }
                if self.position.is_some() {
                    r.position = self.position;
                }
                if self.alpha.is_some() || self.targets.is_some() {
                    return Err(Error::config("--alpha and --targets apply to lora only"));
                }
            }
            PeftConfig::None => {
                if self.rank.is_some()
                    || self.alpha.is_some()
                    || self.targets.is_some()
                    || self.position.is_some()
                {
                    return Err(Error::config(
                        "adapter flags need --peft lora or --peft reft",
                    ));
                }
            }
        }

        let t = &mut cfg.train;
        set(&mut t.epochs, self.epochs);
        set(&mut t.learning_rate, self.lr);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.weight_decay, self.weight_decay);
        set(&mut t.min_count, self.min_count);
        Ok(())
    }
}

impl PrepareArgs {
    pub fn apply(self, cfg: &mut RunConfig) {
        let d = &mut cfg.dataset;
        if self.input.is_some() {
            d.path = self.input;
        }
        set(&mut d.format, self.format);
        if self.labels.is_some() {
            d.labels = self.labels;
        }
        if self.session {
            d.grouping = Some(Grouping::Session);
        } else if let Some(size) = self.window {
            d.grouping = Some(Grouping::Window {
                size,
                stride: self.stride.unwrap_or(size),
            });
        }
        set(&mut d.train_ratio, self.split);
    }
}
