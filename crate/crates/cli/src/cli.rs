//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource as ArgSource;
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use hatelens_core::data::{default_lexicon, gen_synthetic};
use hatelens_core::encoder::EncoderConfig;
use hatelens_core::eval::{
    attention_diff, confidence_interval, round_to, speedup, threshold_sweep, MetricsReport,
    DEFAULT_HIGHLIGHT_QUANTILE,
};
use hatelens_core::relation::LAMBDA_GRID;
use hatelens_core::training::{PreparedExample, TargetMode, TrainConfig, DEFAULT_LEARNING_RATE};

use crate::checkpoint::{config_mismatch, Checkpoint};
use crate::formats::{load_lexicon, load_vocab, save_corpus, save_lexicon, write_output};
use crate::pipeline::{load_data, parse_value_source, train_and_write, DataOptions, LoadedData, RunSpec};
use crate::render::{render, AttentionDocument, ExampleJson, Format};
use crate::report::{metrics_table, AblationReport, AblationRow, MetricsJson, RelationLine};
use crate::{config, Error, Result};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "HATELENS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "hatelens",
    version,
    about = "Target-aware implicit hate speech classification with relation injection",
    after_help = "Every subcommand accepts --config FILE with `key = value` lines named after its long flags; \
                  flags given on the command line win over the file."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the built-in entity lexicon as `phrase<TAB>CLASS` lines.
    Lexicon(LexiconArgs),
    /// Generate a seeded synthetic corpus whose targets come from a lexicon.
    GenSynthetic(GenArgs),
    /// Train one target configuration over several seeds.
    Train(TrainArgs),
    /// Train all five target configurations under identical seeds.
    Ablate(AblateArgs),
    /// Train one configuration for each amplification factor in a grid.
    Sweep(SweepArgs),
    /// Score a checkpoint on a corpus.
    Evaluate(EvaluateArgs),
    /// Compare [CLS]-to-token attention of a model against a baseline.
    Analyze(AnalyzeArgs),
    /// Mean, sample std and 95% t interval of a few run scores.
    Ci(CiArgs),
    /// Ratio of baseline to model convergence steps.
    Speedup(SpeedupArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// `key = value` file supplying defaults for this subcommand's flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 2500)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Lexicon file (`phrase<TAB>CLASS`) providing the entities.
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Line-delimited corpus; repeat (or comma-separate) to train on the
    /// combined set with per-dataset test evaluation.
    #[arg(long, required = true, value_delimiter = ',')]
    pub corpus: Vec<PathBuf>,
    /// Split manifest (record-id lists) to use instead of a seeded split.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    pub split: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    pub split_seed: u64,
    /// Tag explicit targets with this lexicon instead of the records' spans.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// External target masks; take precedence over lexicon and spans.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    #[arg(long, default_value_t = hatelens_core::text::DEFAULT_MAX_LEN)]
    pub max_len: usize,
}

impl DataArgs {
    fn options(&self) -> Result<DataOptions> {
        let split: [f64; 3] = self
            .split
            .as_slice()
            .try_into()
            .map_err(|_| Error::Usage("--split takes exactly three fractions".into()))?;
        Ok(DataOptions {
            corpora: self.corpus.clone(),
            splits: self.splits.clone(),
            split,
            split_seed: self.split_seed,
            lexicon: self.lexicon.clone(),
            masks: self.masks.clone(),
            min_freq: self.min_freq,
            max_len: self.max_len,
        })
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub n_heads: usize,
    #[arg(long, default_value_t = 2)]
    pub n_layers: usize,
    #[arg(long, default_value_t = 128)]
    pub d_ff: usize,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    /// Learning rate (the full-size reference setting is 2e-5).
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    /// Optimizer steps between validation passes.
    #[arg(long, default_value_t = 50)]
    pub eval_every: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Value vectors of the relation attention: `targets` or `cls`.
    #[arg(long, default_value = "targets")]
    pub value_source: String,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory [default: $HATELENS_OUT_DIR, else hatelens-out].
    #[arg(long, env = OUT_DIR_ENV, default_value = "hatelens-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// One of none, random20, implicit, explicit, both.
    #[arg(long, default_value = "both")]
    pub target_mode: String,
    /// Amplification factor of the injected relation vector.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "both")]
    pub target_mode: String,
    /// Amplification factors to train.
    #[arg(long, value_delimiter = ',', default_values_t = LAMBDA_GRID)]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file [default: vocab.txt beside the checkpoint].
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Tag explicit targets with this lexicon instead of the records' spans.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also write the relation head's outputs, one record per example.
    #[arg(long)]
    pub relations: Option<PathBuf>,
    #[arg(long, default_value_t = hatelens_core::text::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Html,
    Ansi,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Checkpoint of the comparison model, usually trained without targets.
    #[arg(long)]
    pub baseline_checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file [default: vocab.txt beside the checkpoint].
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Tokens whose attention gain exceeds this per-sentence quantile are
    /// highlighted (0.8 marks roughly the top 20%).
    #[arg(long, default_value_t = DEFAULT_HIGHLIGHT_QUANTILE)]
    pub quantile: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    /// Analyse at most this many records.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Output file [default: <out-dir>/attention.<ext>; ansi prints to the terminal].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = hatelens_core::text::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[command(flatten)]
    pub out_dir: OutArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct CiArgs {
    /// Scores of the individual runs.
    #[arg(required = true, num_args = 2.., allow_negative_numbers = true)]
    pub scores: Vec<f64>,
    /// Decimals used for the reported interval.
    #[arg(long, default_value_t = 2)]
    pub decimals: u32,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct SpeedupArgs {
    pub baseline_steps: u64,
    pub model_steps: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

/// Parses `argv`, folding in the subcommand's `--config` file: file values
/// fill in every flag not given on the command line, and keys that are not
/// flags of the subcommand are rejected.
pub fn parse(argv: Vec<OsString>) -> std::result::Result<Cli, clap::Error> {
    parse_with_config(argv).map_err(|e| match e {
        ParseError::Clap(e) => e,
        ParseError::Config(msg) => Cli::command().error(clap::error::ErrorKind::InvalidValue, msg),
    })
}

enum ParseError {
    Clap(clap::Error),
    Config(String),
}

fn parse_with_config(mut argv: Vec<OsString>) -> std::result::Result<Cli, ParseError> {
    let command = Cli::command();
    let matches = command.clone().try_get_matches_from(&argv).map_err(ParseError::Clap)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    if let Some(path) = sub.get_one::<PathBuf>("config") {
        let entries = config::load(path).map_err(|e| ParseError::Config(e.to_string()))?;
        let sub_cmd = command.find_subcommand(name).expect("parsed subcommand exists");
        for entry in entries {
            let arg = sub_cmd
                .get_arguments()
                .find(|a| a.get_long() == Some(entry.key.as_str()) && entry.key != "config")
                .ok_or_else(|| {
                    ParseError::Config(format!(
                        "{}:{}: unknown key {:?} for `{name}`",
                        path.display(),
                        entry.line,
                        entry.key
                    ))
                })?;
            if sub.value_source(arg.get_id().as_str()) == Some(ArgSource::CommandLine) {
                continue;
            }
            if matches!(arg.get_action(), ArgAction::SetTrue) {
                match entry.value.as_str() {
                    "true" => argv.push(format!("--{}", entry.key).into()),
                    "false" => {}
                    v => return Err(ParseError::Config(format!("{}: expected true or false, got {v:?}", entry.key))),
                }
            } else {
                argv.push(format!("--{}={}", entry.key, entry.value).into());
            }
        }
        let matches = command.try_get_matches_from(&argv).map_err(ParseError::Clap)?;
        return Cli::from_arg_matches(&matches).map_err(ParseError::Clap);
    }
    Cli::from_arg_matches(&matches).map_err(ParseError::Clap)
}

/// Parses and runs; returns the process exit code. Errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let cli = match parse(args.into_iter().map(Into::into).collect()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Lexicon(a) => save_lexicon(&a.out, &default_lexicon()),
        Command::GenSynthetic(a) => cmd_gen_synthetic(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Ci(a) => cmd_ci(&a),
        Command::Speedup(a) => {
            let s = speedup(a.baseline_steps, a.model_steps)?;
            println!("speedup {:.2}", round_to(s, 2));
            Ok(())
        }
    }
}

fn cmd_gen_synthetic(a: &GenArgs) -> Result<()> {
    let lexicon = load_lexicon(&a.lexicon).map_err(|e| Error::Usage(e.to_string()))?;
    let corpus = gen_synthetic(a.size, a.seed, &lexicon)?;
    save_corpus(&a.out, &corpus)?;
    eprintln!("wrote {} records to {}", corpus.len(), a.out.display());
    Ok(())
}

fn parse_mode(s: &str) -> Result<TargetMode> {
    TargetMode::parse(s).map_err(|e| Error::Usage(e.to_string()))
}

fn encoder_config(model: &ModelArgs, data: &LoadedData, max_len: usize) -> Result<EncoderConfig> {
    let cfg = EncoderConfig {
        vocab_size: data.vocab.len(),
        max_len,
        d_model: model.d_model,
        n_heads: model.n_heads,
        n_layers: model.n_layers,
        d_ff: model.d_ff,
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train_config(optim: &OptimArgs, mode: TargetMode, lambda: f64) -> Result<TrainConfig> {
    let mut unique = optim.seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != optim.seeds.len() {
        return Err(Error::Usage(format!("--seeds {:?} repeats a seed", optim.seeds)));
    }
    let cfg = TrainConfig {
        learning_rate: optim.lr,
        batch_size: optim.batch_size,
        epochs: optim.epochs,
        eval_every: optim.eval_every,
        seeds: optim.seeds.clone(),
        lambda,
        target_mode: mode,
        value_source: parse_value_source(&optim.value_source)?,
        weight_decay: optim.weight_decay,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mode = parse_mode(&a.target_mode)?;
    let data_opts = a.data.options()?;
    let cfg = train_config(&a.optim, mode, a.lambda)?;
    let data = load_data(&data_opts)?;
    let encoder = encoder_config(&a.model, &data, data_opts.max_len)?;
    let spec = RunSpec {
        data_opts: &data_opts,
        encoder,
        train: &cfg,
        jobs: a.optim.jobs,
    };
    let summary = train_and_write(&spec, &data, &a.out.out_dir)?;
    print!("{}", metrics_table(&summary));
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let data_opts = a.data.options()?;
    let data = load_data(&data_opts)?;
    let encoder = encoder_config(&a.model, &data, data_opts.max_len)?;
    let mut rows = Vec::new();
    for mode in TargetMode::ALL {
        let cfg = train_config(&a.optim, mode, a.lambda)?;
        let spec = RunSpec {
            data_opts: &data_opts,
            encoder,
            train: &cfg,
            jobs: a.optim.jobs,
        };
        let summary = train_and_write(&spec, &data, &a.out.out_dir.join(mode.as_str()))?;
        let f1: Vec<f64> = summary.records.iter().map(|r| r.test.macro_f1).collect();
        let steps: Vec<f64> = summary.records.iter().map(|r| r.convergence_step as f64).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        rows.push(AblationRow {
            target_mode: mode.as_str().to_string(),
            seeds: summary.records.iter().map(|r| r.seed).collect(),
            test_macro_f1_mean: mean(&f1),
            test_macro_f1_std: summary.aggregate.as_ref().map_or(0.0, |g| g.test_macro_f1.std),
            convergence_step_mean: mean(&steps),
            anchor: mode == TargetMode::Both,
        });
    }
    let report = AblationReport::new(rows);
    write_output(&a.out.out_dir.join("ablation.json"), report.to_json())?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mode = parse_mode(&a.target_mode)?;
    let data_opts = a.data.options()?;
    let data = load_data(&data_opts)?;
    let encoder = encoder_config(&a.model, &data, data_opts.max_len)?;
    println!("{:<8} {:>8} {:>10}", "lambda", "test_f1", "conv_step");
    for &lambda in &a.lambdas {
        let cfg = train_config(&a.optim, mode, lambda)?;
        let spec = RunSpec {
            data_opts: &data_opts,
            encoder,
            train: &cfg,
            jobs: a.optim.jobs,
        };
        let summary = train_and_write(&spec, &data, &a.out.out_dir.join(format!("lambda-{lambda}")))?;
        let n = summary.records.len() as f64;
        let f1 = summary.records.iter().map(|r| r.test.macro_f1).sum::<f64>() / n;
        let step = summary.records.iter().map(|r| r.convergence_step as f64).sum::<f64>() / n;
        println!("{lambda:<8} {:>8.2} {step:>10.1}", 100.0 * f1);
    }
    Ok(())
}

fn sibling_vocab(checkpoint: &Path, vocab: &Option<PathBuf>) -> PathBuf {
    vocab
        .clone()
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.txt"))
}

fn prepare_corpus(
    corpus: &Path,
    vocab_path: &Path,
    lexicon: Option<&Path>,
    max_len: usize,
) -> Result<Vec<PreparedExample>> {
    let records = crate::formats::load_corpus(corpus)?;
    let vocab = load_vocab(vocab_path)?;
    let lexicon = lexicon.map(load_lexicon).transpose()?;
    Ok(records
        .iter()
        .map(|r| hatelens_core::training::prepare_example(r, &vocab, max_len, lexicon.as_ref()))
        .collect::<hatelens_core::Result<Vec<_>>>()?)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let max_len = a.max_len.min(model.config().max_len);
    let examples = prepare_corpus(&a.corpus, &sibling_vocab(&a.checkpoint, &a.vocab), a.lexicon.as_deref(), max_len)?;
    let inputs: Vec<_> = examples.iter().map(PreparedExample::input).collect();
    let labels: Vec<u8> = examples.iter().map(|e| e.example.label).collect();
    let probs = model.predict_proba(&inputs)?;
    let report = MetricsReport::at_threshold(&probs, &labels, a.threshold)?;
    let sweep = threshold_sweep(&probs, &labels)?;
    if let Some(path) = &a.relations {
        let mut out = String::new();
        for e in &examples {
            if let Some(r) = model.relation_output(e.input())? {
                out.push_str(&serde_json::to_string(&RelationLine::new(&e.id, &r)).expect("relation lines serialize"));
                out.push('\n');
            }
        }
        write_output(path, out)?;
    }
    println!("{}", serde_json::to_string(&MetricsJson::from(&report)).expect("metrics serialize"));
    let c = report.confusion;
    println!("examples {}  threshold {:.2}  macro-F1 {:.2}", labels.len(), a.threshold, 100.0 * report.macro_f1);
    for (k, m) in report.classes.iter().enumerate() {
        println!("  class {k}: precision {:.4} recall {:.4} f1 {:.4}", m.precision, m.recall, m.f1);
    }
    println!("  confusion: tp {} fp {} tn {} fn {}", c.tp, c.fp, c.tn, c.fn_);
    println!("  best threshold on this data {:.2} -> macro-F1 {:.2}", sweep.best_threshold, 100.0 * sweep.best_macro_f1);
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.quantile) {
        return Err(Error::Usage(format!("--quantile {} outside [0, 1]", a.quantile)));
    }
    let model = Checkpoint::load(&a.checkpoint)?;
    let baseline = Checkpoint::load(&a.baseline_checkpoint)?;
    if let Some(diff) = config_mismatch(model.params.config(), baseline.params.config()) {
        return Err(Error::Usage(format!("checkpoint configurations differ: {diff}")));
    }
    let (model, baseline) = (model.model()?, baseline.model()?);
    let examples = prepare_corpus(&a.corpus, &sibling_vocab(&a.checkpoint, &a.vocab), None, a.max_len.min(model.config().max_len))?;
    let limit = a.limit.unwrap_or(examples.len());
    let mut doc = AttentionDocument {
        quantile: a.quantile,
        examples: Vec::new(),
    };
    for e in examples.iter().take(limit) {
        let report = attention_diff(&e.tokens, &e.example, &model, &baseline, a.quantile)?;
        doc.examples.push(ExampleJson::new(&e.id, e.example.label, &report));
    }
    let format = match a.format {
        FormatArg::Json => Format::Json,
        FormatArg::Html => Format::Html,
        FormatArg::Ansi => Format::Ansi,
    };
    let text = render(&doc, format);
    match (&a.out, format) {
        (Some(path), _) => write_output(path, text)?,
        (None, Format::Ansi) => print!("{text}"),
        (None, _) => {
            let path = a.out_dir.out_dir.join(format!("attention.{}", format.extension()));
            write_output(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_ci(a: &CiArgs) -> Result<()> {
    let ci = confidence_interval(&a.scores)?;
    let r = ci.rounded(a.decimals);
    let d = a.decimals as usize;
    println!(
        "mean {:.d$} ± {:.d$}  95% CI [{:.d$}, {:.d$}]  (n = {}, t = {})",
        r.mean, r.std, r.lo, r.hi, ci.n, ci.t
    );
    Ok(())
}
