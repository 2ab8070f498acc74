mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mapspan::encoder::EncoderKind;
use mapspan::heads::FirstPosition;
use mapspan::inference::Strategy;
use mapspan::model::{Directions, HeadKind};
use mapspan::trainer::{MatrixLoss, NormMode, TrainConfig};
use serde::de::DeserializeOwned;

use config::{BenchKind, ModelSpec};

/// Parses a kebab-case enum name the same way config files spell it.
fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(name = "mapspan", version, about = "Span prediction heads: data, training, evaluation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic needle-task train and dev splits.
    Gen(GenArgs),
    /// Train a model and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Check analytic gradients of every head and loss mode.
    Gradcheck(GradcheckArgs),
    /// Cost, k-sweep and convergence benchmarks.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config or manifest; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    num: Option<usize>,
    #[arg(long)]
    dev_num: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    passage_min: Option<usize>,
    #[arg(long)]
    passage_max: Option<usize>,
    #[arg(long)]
    needle_min: Option<usize>,
    #[arg(long)]
    needle_max: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_parser = kebab::<HeadKind>)]
    head: Option<HeadKind>,
    #[arg(long, value_parser = kebab::<Directions>)]
    directions: Option<Directions>,
    #[arg(long, value_parser = kebab::<FirstPosition>)]
    first: Option<FirstPosition>,
    #[arg(long, value_parser = kebab::<EncoderKind>)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    match_feature: Option<bool>,
    #[arg(long)]
    attention_width: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Parameter initialisation seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn apply(self, m: &mut ModelSpec) {
        set(&mut m.head, self.head);
        set(&mut m.directions, self.directions);
        set(&mut m.first, self.first);
        set(&mut m.encoder, self.encoder);
        set(&mut m.hidden, self.hidden);
        set(&mut m.embed, self.embed);
        set(&mut m.match_feature, self.match_feature);
        if self.attention_width.is_some() {
            m.attention_width = self.attention_width;
        }
        if self.max_len.is_some() {
            m.max_len = self.max_len;
        }
        set(&mut m.seed, self.seed);
    }
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long)]
    sample_k: Option<usize>,
    #[arg(long, value_parser = kebab::<NormMode>)]
    norm_mode: Option<NormMode>,
    #[arg(long, value_parser = kebab::<MatrixLoss>)]
    matrix: Option<MatrixLoss>,
    #[arg(long)]
    shared_columns: Option<bool>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_sequence: Option<usize>,
    /// Seeds the batch shuffle.
    #[arg(long)]
    shuffle_seed: Option<u64>,
}

impl TrainingArgs {
    fn apply(self, t: &mut TrainConfig) {
        set(&mut t.sample_k, self.sample_k);
        set(&mut t.norm_mode, self.norm_mode);
        set(&mut t.matrix, self.matrix);
        set(&mut t.shared_columns, self.shared_columns);
        set(&mut t.learning_rate, self.lr);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.epochs, self.epochs);
        set(&mut t.max_sequence, self.max_sequence);
        set(&mut t.seed, self.shuffle_seed);
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train_file: Option<PathBuf>,
    #[arg(long)]
    dev_file: Option<PathBuf>,
    #[arg(long, value_parser = kebab::<Strategy>)]
    strategy: Option<Strategy>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = kebab::<Strategy>)]
    strategy: Option<Strategy>,
    #[arg(long)]
    max_span_len: Option<usize>,
    #[arg(long)]
    ensemble_k: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write report.json and manifest.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Which benchmarks to run (default: all).
    #[arg(long = "bench", value_enum, value_delimiter = ',')]
    benches: Vec<BenchKind>,
    /// Seeds the random matrices of the cost benchmark.
    #[arg(long)]
    cost_seed: Option<u64>,
    /// Seeds the needle data (dev uses the next seed).
    #[arg(long)]
    task_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    ns: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long)]
    max_full: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    num: Option<usize>,
    #[arg(long)]
    dev_num: Option<usize>,
    #[arg(long)]
    full_steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Gen(a) => {
            let mut c: config::GenConfig = config::load(a.common.config.as_deref(), "gen")?;
            set(&mut c.num, a.num);
            set(&mut c.dev_num, a.dev_num);
            set(&mut c.seed, a.seed);
            set(&mut c.passage_min, a.passage_min);
            set(&mut c.passage_max, a.passage_max);
            set(&mut c.needle_min, a.needle_min);
            set(&mut c.needle_max, a.needle_max);
            set(&mut c.vocab, a.vocab);
            commands::gen(&c, &a.common.out)?;
        }
        Command::Train(a) => {
            let mut c: config::TrainRunConfig = config::load(a.common.config.as_deref(), "train")?;
            set(&mut c.train_file, a.train_file);
            if a.dev_file.is_some() {
                c.dev_file = a.dev_file;
            }
            if a.strategy.is_some() {
                c.strategy = a.strategy;
            }
            a.model.apply(&mut c.model);
            a.training.apply(&mut c.training);
            commands::train(&c, &a.common.out)?;
        }
        Command::Eval(a) => {
            let mut c: config::EvalConfig = config::load(a.common.config.as_deref(), "eval")?;
            set(&mut c.checkpoint, a.checkpoint);
            set(&mut c.data, a.data);
            if a.strategy.is_some() {
                c.strategy = a.strategy;
            }
            if a.max_span_len.is_some() {
                c.search.max_span_len = a.max_span_len;
            }
            set(&mut c.search.ensemble_k, a.ensemble_k);
            set(&mut c.bins, a.bins);
            commands::eval(&c, &a.common.out)?;
        }
        Command::Gradcheck(a) => {
            let mut c: config::GradcheckConfig = config::load(a.config.as_deref(), "gradcheck")?;
            set(&mut c.tolerance, a.tolerance);
            set(&mut c.seed, a.seed);
            if !commands::gradcheck(&c, a.out.as_deref())? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Bench(a) => {
            let mut c: config::BenchConfig = config::load(a.common.config.as_deref(), "bench")?;
            if !a.benches.is_empty() {
                c.benches = a.benches;
            }
            set(&mut c.seed, a.cost_seed);
            set(&mut c.task.seed, a.task_seed);
            if !a.ns.is_empty() {
                c.cost.ns = a.ns;
            }
            if !a.ks.is_empty() {
                c.ks = a.ks;
            }
            set(&mut c.cost.max_full, a.max_full);
            set(&mut c.cost.repeats, a.repeats);
            set(&mut c.task.num, a.num);
            set(&mut c.task.dev_num, a.dev_num);
            set(&mut c.convergence.full_steps, a.full_steps);
            set(&mut c.convergence.eval_every, a.eval_every);
            a.model.apply(&mut c.model);
            a.training.apply(&mut c.training);
            commands::bench(&c, &a.common.out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
