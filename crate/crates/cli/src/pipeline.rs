//! Shared steps of the training commands: loading and splitting corpora,
//! preparing examples, running seeds, and writing run directories.

use std::path::{Path, PathBuf};

use hatelens_core::data::{combine, combine_splits, make_splits, DatasetSplit};
use hatelens_core::encoder::EncoderConfig;
use hatelens_core::relation::ValueSource;
use hatelens_core::target::{align_external_masks, GazetteerLexicon};
use hatelens_core::text::Vocab;
use hatelens_core::training::{aggregate, train, PreparedSplits, TrainConfig, TrainOutcome};

use crate::checkpoint::Checkpoint;
use crate::formats::{load_corpus, load_lexicon, load_masks, save_vocab, write_output, SplitManifest};
use crate::report::{trace_lines, RunConfigJson, RunJson, Summary};
use crate::{Error, Result};

/// Where the data comes from and how it is split and tagged.
#[derive(Clone, Debug, PartialEq)]
pub struct DataOptions {
    pub corpora: Vec<PathBuf>,
    pub splits: Option<PathBuf>,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub lexicon: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub min_freq: usize,
    pub max_len: usize,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            corpora: Vec::new(),
            splits: None,
            split: [0.8, 0.1, 0.1],
            split_seed: 7,
            lexicon: None,
            masks: None,
            min_freq: 1,
            max_len: hatelens_core::text::DEFAULT_MAX_LEN,
        }
    }
}

/// Which provider supplied the explicit targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetSource {
    Masks,
    Lexicon,
    Spans,
}

impl TargetSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetSource::Masks => "masks",
            TargetSource::Lexicon => "lexicon",
            TargetSource::Spans => "spans",
        }
    }
}

pub struct LoadedData {
    pub split: DatasetSplit,
    pub vocab: Vocab,
    pub prepared: PreparedSplits,
    pub target_source: TargetSource,
}

/// Loads every corpus and splits it. A single corpus is split directly;
/// several corpora are split one by one and joined, with ids prefixed by
/// their dataset tag, so every per-dataset test set stays intact. A split
/// manifest, when given, replaces the seeded split.
pub fn load_split(opts: &DataOptions) -> Result<DatasetSplit> {
    if opts.corpora.is_empty() {
        return Err(Error::Usage("at least one --corpus is required".into()));
    }
    let corpora = opts
        .corpora
        .iter()
        .map(|p| load_corpus(p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(manifest) = &opts.splits {
        let records = if corpora.len() == 1 {
            corpora.into_iter().next().expect("one corpus")
        } else {
            combine(&corpora)
        };
        return SplitManifest::load(manifest)?.apply(&records);
    }
    if corpora.len() == 1 {
        return Ok(make_splits(&corpora[0], opts.split, opts.split_seed)?);
    }
    let splits = corpora
        .iter()
        .map(|c| make_splits(c, opts.split, opts.split_seed))
        .collect::<hatelens_core::Result<Vec<_>>>()?;
    Ok(combine_splits(&splits)?)
}

/// Explicit targets come from, in order of precedence: an external mask
/// file, a lexicon, or the records' own target spans.
pub fn load_data(opts: &DataOptions) -> Result<LoadedData> {
    let split = load_split(opts)?;
    let vocab = Vocab::build(split.train.iter().map(|r| r.text.as_str()), opts.min_freq)?;
    let lexicon: Option<GazetteerLexicon> = opts.lexicon.as_deref().map(load_lexicon).transpose()?;
    let mut prepared = PreparedSplits::prepare(&split, &vocab, opts.max_len, lexicon.as_ref())?;
    let target_source = if let Some(path) = &opts.masks {
        let masks = load_masks(path)?;
        let all: Vec<_> = prepared
            .train
            .iter()
            .chain(&prepared.valid)
            .chain(&prepared.test)
            .map(|e| (e.id.as_str(), e.example.n_tokens()))
            .collect();
        let mut aligned = align_external_masks(&masks, &all)?.into_iter();
        for e in prepared
            .train
            .iter_mut()
            .chain(prepared.valid.iter_mut())
            .chain(prepared.test.iter_mut())
        {
            e.mask = aligned.next().expect("one mask per example");
        }
        TargetSource::Masks
    } else if lexicon.is_some() {
        TargetSource::Lexicon
    } else {
        TargetSource::Spans
    };
    Ok(LoadedData {
        split,
        vocab,
        prepared,
        target_source,
    })
}

/// Trains every seed in `cfg.seeds`, using up to `jobs` worker threads.
/// Results come back in seed order regardless of scheduling.
pub fn run_seeds(encoder: EncoderConfig, data: &PreparedSplits, cfg: &TrainConfig, jobs: usize) -> Result<Vec<TrainOutcome>> {
    let jobs = jobs.max(1);
    let mut outcomes: Vec<Option<TrainOutcome>> = (0..cfg.seeds.len()).map(|_| None).collect();
    for (chunk_idx, seeds) in cfg.seeds.chunks(jobs).enumerate() {
        let results: Vec<hatelens_core::Result<TrainOutcome>> = std::thread::scope(|s| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    s.spawn(move || {
                        eprintln!("[{}] seed {seed}: training", cfg.target_mode.as_str());
                        let out = train(encoder, data, cfg, seed);
                        if let Ok(o) = &out {
                            eprintln!(
                                "[{}] seed {seed}: converged at step {}, test macro-F1 {:.4}",
                                cfg.target_mode.as_str(),
                                o.record.convergence_step,
                                o.record.test.macro_f1
                            );
                        }
                        out
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });
        for (i, r) in results.into_iter().enumerate() {
            outcomes[chunk_idx * jobs + i] = Some(r?);
        }
    }
    Ok(outcomes.into_iter().map(|o| o.expect("every seed ran")).collect())
}

/// Everything needed to describe one training invocation.
pub struct RunSpec<'a> {
    pub data_opts: &'a DataOptions,
    pub encoder: EncoderConfig,
    pub train: &'a TrainConfig,
    pub jobs: usize,
}

fn config_json(spec: &RunSpec<'_>, data: &LoadedData) -> RunConfigJson {
    let cfg = spec.train;
    let (tr, va, te) = data.split.sizes();
    RunConfigJson {
        corpora: spec.data_opts.corpora.iter().map(|p| p.display().to_string()).collect(),
        target_mode: cfg.target_mode.as_str().to_string(),
        lambda: cfg.lambda,
        value_source: cfg.value_source.as_str().to_string(),
        seeds: cfg.seeds.clone(),
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        eval_every: cfg.eval_every,
        weight_decay: cfg.weight_decay,
        split_seed: spec.data_opts.split_seed,
        split: spec.data_opts.split,
        min_freq: spec.data_opts.min_freq,
        target_source: data.target_source.as_str().to_string(),
        vocab_size: spec.encoder.vocab_size,
        max_len: spec.encoder.max_len,
        d_model: spec.encoder.d_model,
        n_heads: spec.encoder.n_heads,
        n_layers: spec.encoder.n_layers,
        d_ff: spec.encoder.d_ff,
        train_size: tr,
        valid_size: va,
        test_size: te,
    }
}

/// Trains all seeds and writes the run directory:
/// `summary.json`, `metrics.jsonl` (one record per seed), `vocab.txt`,
/// `splits.json`, and per seed `seed-<s>.trace.jsonl` and `seed-<s>.ckpt`.
pub fn train_and_write(spec: &RunSpec<'_>, data: &LoadedData, out_dir: &Path) -> Result<Summary> {
    let outcomes = run_seeds(spec.encoder, &data.prepared, spec.train, spec.jobs)?;
    save_vocab(&out_dir.join("vocab.txt"), &data.vocab)?;
    SplitManifest::of(&data.split).save(&out_dir.join("splits.json"))?;
    let mut metrics = String::new();
    for o in &outcomes {
        let seed = o.record.seed;
        write_output(&out_dir.join(format!("seed-{seed}.trace.jsonl")), trace_lines(&o.record))?;
        Checkpoint {
            target_mode: spec.train.target_mode,
            value_source: spec.train.value_source,
            lambda: spec.train.lambda,
            params: o.model.params.clone(),
        }
        .save(&out_dir.join(format!("seed-{seed}.ckpt")))?;
        metrics.push_str(&serde_json::to_string(&RunJson::from(&o.record)).expect("records serialize"));
        metrics.push('\n');
    }
    write_output(&out_dir.join("metrics.jsonl"), metrics)?;
    let records: Vec<_> = outcomes.iter().map(|o| o.record.clone()).collect();
    let summary = Summary {
        config: config_json(spec, data),
        records: records.iter().map(RunJson::from).collect(),
        aggregate: if records.len() >= 2 {
            Some((&aggregate(&records)?).into())
        } else {
            None
        },
    };
    write_output(&out_dir.join("summary.json"), summary.to_json())?;
    Ok(summary)
}

pub fn parse_value_source(s: &str) -> Result<ValueSource> {
    ValueSource::parse(s).map_err(|e| Error::Usage(e.to_string()))
}
