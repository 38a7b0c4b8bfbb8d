//! Mini-batch training with AdamW, periodic validation with a threshold
//! sweep, best-checkpoint selection and multi-seed aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::CorpusRecord;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::eval::{confidence_interval, mean_std, threshold_sweep, ConfidenceInterval, MeanStd, MetricsReport};
use crate::model::{Model, ModelInput};
use crate::numerics::{Graph, Tensor};
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::relation::{RelationConfig, ValueSource, DEFAULT_LAMBDA};
use crate::target::{random_mask, GazetteerLexicon, TargetMask};
use crate::text::{encode, tokenize, TokenizedExample, Vocab};
use crate::{Error, Result};

/// Learning rate of the large pre-trained setting; far too small for a
/// randomly initialised desk-scale encoder, hence not the default.
pub const REFERENCE_LEARNING_RATE: f64 = 2e-5;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const RANDOM_TARGET_RATE: f64 = 0.2;

/// Which targets feed the relation head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetMode {
    /// Head bypassed; the classifier reads `[CLS]` directly.
    None,
    /// Explicit branch fed with randomly flagged tokens.
    Random20,
    Implicit,
    Explicit,
    Both,
}

impl TargetMode {
    pub const ALL: [TargetMode; 5] = [
        TargetMode::None,
        TargetMode::Random20,
        TargetMode::Implicit,
        TargetMode::Explicit,
        TargetMode::Both,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::None => "none",
            TargetMode::Random20 => "random20",
            TargetMode::Implicit => "implicit",
            TargetMode::Explicit => "explicit",
            TargetMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<TargetMode> {
        TargetMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown target mode {s:?}; expected one of none, random20, implicit, explicit, both"
                ))
            })
    }

    /// Head configuration for this mode; `None` means bypass.
    pub fn head(self, lambda: f64, value_source: ValueSource) -> Option<RelationConfig> {
        let (use_explicit, use_implicit) = match self {
            TargetMode::None => return None,
            TargetMode::Random20 | TargetMode::Explicit => (true, false),
            TargetMode::Implicit => (false, true),
            TargetMode::Both => (true, true),
        };
        Some(RelationConfig {
            lambda,
            value_source,
            use_explicit,
            use_implicit,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer steps between validation passes.
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub target_mode: TargetMode,
    pub value_source: ValueSource,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub random_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 16,
            epochs: 6,
            eval_every: 50,
            seeds: alloc::vec![1, 2, 3],
            lambda: DEFAULT_LAMBDA,
            target_mode: TargetMode::Both,
            value_source: ValueSource::Targets,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            random_rate: RANDOM_TARGET_RATE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate > 0.0),
            ("batch_size", self.batch_size > 0),
            ("epochs", self.epochs > 0),
            ("eval_every", self.eval_every > 0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if let Some(h) = self.target_mode.head(self.lambda, self.value_source) {
            h.validate()?;
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

/// A corpus record after tokenization, encoding and target identification.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    pub id: String,
    pub dataset: String,
    /// Token strings kept by the encoder (no `[CLS]`).
    pub tokens: Vec<String>,
    pub example: TokenizedExample,
    pub mask: TargetMask,
}

impl PreparedExample {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            example: &self.example,
            mask: &self.mask,
        }
    }
}

/// Encodes a record. Explicit targets come from `lexicon` when given,
/// otherwise from the record's own target spans, otherwise none.
pub fn prepare_example(
    record: &CorpusRecord,
    vocab: &Vocab,
    max_len: usize,
    lexicon: Option<&GazetteerLexicon>,
) -> Result<PreparedExample> {
    let toks = tokenize(&record.text);
    let example = encode(&toks, vocab, max_len)?.with_label(record.label);
    let n = example.n_tokens();
    let mask = match lexicon {
        Some(lex) => lex.tag(&toks),
        None => TargetMask::from_char_spans(&toks, &record.spans()),
    }
    .truncated(n);
    Ok(PreparedExample {
        id: record.id.clone(),
        dataset: record.dataset.clone(),
        tokens: toks.into_iter().take(n).map(|t| t.text).collect(),
        example,
        mask,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreparedSplits {
    pub train: Vec<PreparedExample>,
    pub valid: Vec<PreparedExample>,
    pub test: Vec<PreparedExample>,
}

impl PreparedSplits {
    pub fn prepare(
        split: &crate::data::DatasetSplit,
        vocab: &Vocab,
        max_len: usize,
        lexicon: Option<&GazetteerLexicon>,
    ) -> Result<PreparedSplits> {
        let run = |rs: &[CorpusRecord]| -> Result<Vec<PreparedExample>> {
            rs.iter()
                .map(|r| prepare_example(r, vocab, max_len, lexicon))
                .collect()
        };
        Ok(PreparedSplits {
            train: run(&split.train)?,
            valid: run(&split.valid)?,
            test: run(&split.test)?,
        })
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut PreparedExample> {
        self.train
            .iter_mut()
            .chain(self.valid.iter_mut())
            .chain(self.test.iter_mut())
    }
}

/// Owns a model and its optimizer state.
pub struct Trainer {
    pub model: Model,
    state: AdamWState,
    optimizer: AdamWConfig,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model, optimizer: AdamWConfig) -> Trainer {
        let state = AdamWState::new(model.params.tensors());
        Trainer {
            model,
            state,
            optimizer,
            step: 0,
        }
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    /// One forward/backward/update on `inputs`; returns the batch loss
    /// before the update.
    pub fn step(&mut self, inputs: &[ModelInput<'_>]) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.model.params.bind(&mut g);
        let (loss, _) = self.model.loss(&mut g, &vars, inputs)?;
        let loss_value = g.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.step + 1)));
        }
        g.backward(loss)?;
        let grads: Vec<Tensor> = vars
            .iter()
            .zip(self.model.params.tensors())
            .map(|(&v, p)| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
            })
            .collect();
        drop(g);
        adamw_step(self.model.params.tensors_mut(), &grads, &mut self.state, &self.optimizer)?;
        self.step += 1;
        Ok(loss_value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean training loss since the previous evaluation.
    pub train_loss: f64,
    /// Best validation macro-F1 over the threshold grid.
    pub valid_macro_f1: f64,
    pub valid_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub target_mode: TargetMode,
    pub total_steps: usize,
    pub eval_every: usize,
    pub trace: Vec<EvalPoint>,
    /// Step of the best validation macro-F1 (earliest on ties).
    pub convergence_step: usize,
    pub best_valid_macro_f1: f64,
    pub best_threshold: f64,
    /// Test metrics of the checkpoint saved at `convergence_step`.
    pub test: MetricsReport,
    pub test_by_dataset: Vec<(String, MetricsReport)>,
}

pub struct TrainOutcome {
    pub record: RunRecord,
    /// Checkpoint from `convergence_step`.
    pub model: Model,
}

fn labels(examples: &[PreparedExample]) -> Vec<u8> {
    examples.iter().map(|e| e.example.label).collect()
}

fn inputs(examples: &[PreparedExample]) -> Vec<ModelInput<'_>> {
    examples.iter().map(PreparedExample::input).collect()
}

/// Replaces explicit masks with seeded random ones at `rate`.
pub fn assign_random_targets(data: &mut PreparedSplits, rate: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a46_e7a5_0000_0000);
    for e in data.iter_mut() {
        e.mask = random_mask(e.example.n_tokens(), rate, &mut rng)?;
    }
    Ok(())
}

/// Trains one seed and returns its record with the best checkpoint.
///
/// Initialisation, shuffling and random targets all derive from `seed`.
pub fn train(
    encoder: EncoderConfig,
    data: &PreparedSplits,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for (name, split) in [("train", &data.train), ("valid", &data.valid), ("test", &data.test)] {
        if split.is_empty() {
            return Err(Error::Config(format!("{name} split is empty")));
        }
    }
    let valid_labels = labels(&data.valid);
    if !(valid_labels.contains(&0) && valid_labels.contains(&1)) {
        return Err(Error::Config(
            "validation split needs at least one example of each class".into(),
        ));
    }
    let total_steps = cfg.epochs * cfg.steps_per_epoch(data.train.len());
    if total_steps < cfg.eval_every {
        return Err(Error::Config(format!(
            "eval_every {} exceeds the {total_steps} total training steps",
            cfg.eval_every
        )));
    }

    let mut random_data;
    let data = if cfg.target_mode == TargetMode::Random20 {
        random_data = data.clone();
        assign_random_targets(&mut random_data, cfg.random_rate, seed)?;
        &random_data
    } else {
        data
    };

    let params = EncoderParams::init(encoder, seed)?;
    let model = Model::new(params, cfg.target_mode.head(cfg.lambda, cfg.value_source))?;
    let mut trainer = Trainer::new(model, cfg.optimizer());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5851_f42d_4c95_7f2d));

    let valid_inputs = inputs(&data.valid);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut trace = Vec::with_capacity(total_steps / cfg.eval_every);
    let mut best: Option<(EvalPoint, Model)> = None;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ModelInput<'_>> = chunk.iter().map(|&i| data.train[i].input()).collect();
            loss_sum += trainer.step(&batch)?;
            loss_count += 1;
            if trainer.steps().is_multiple_of(cfg.eval_every) {
                let probs = trainer.model.predict_proba(&valid_inputs)?;
                let sweep = threshold_sweep(&probs, &valid_labels)?;
                let point = EvalPoint {
                    step: trainer.steps(),
                    train_loss: loss_sum / loss_count as f64,
                    valid_macro_f1: sweep.best_macro_f1,
                    valid_threshold: sweep.best_threshold,
                };
                loss_sum = 0.0;
                loss_count = 0;
                trace.push(point);
                if best.as_ref().is_none_or(|(b, _)| point.valid_macro_f1 > b.valid_macro_f1) {
                    best = Some((point, trainer.model.clone()));
                }
            }
        }
    }
    let (best_point, best_model) = best.expect("at least one evaluation ran");

    let test_probs = best_model.predict_proba(&inputs(&data.test))?;
    let test_labels = labels(&data.test);
    let test = MetricsReport::at_threshold(&test_probs, &test_labels, best_point.valid_threshold)?;
    let mut datasets: Vec<&str> = data.test.iter().map(|e| e.dataset.as_str()).collect();
    datasets.sort_unstable();
    datasets.dedup();
    let mut test_by_dataset = Vec::new();
    if datasets.len() > 1 {
        for ds in datasets {
            let (p, l): (Vec<f64>, Vec<u8>) = data
                .test
                .iter()
                .zip(&test_probs)
                .filter(|(e, _)| e.dataset == ds)
                .map(|(e, &p)| (p, e.example.label))
                .unzip();
            test_by_dataset.push((
                String::from(ds),
                MetricsReport::at_threshold(&p, &l, best_point.valid_threshold)?,
            ));
        }
    }

    Ok(TrainOutcome {
        record: RunRecord {
            seed,
            target_mode: cfg.target_mode,
            total_steps,
            eval_every: cfg.eval_every,
            trace,
            convergence_step: best_point.step,
            best_valid_macro_f1: best_point.valid_macro_f1,
            best_threshold: best_point.valid_threshold,
            test,
            test_by_dataset,
        },
        model: best_model,
    })
}

/// Cross-seed summary of a set of runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub test_macro_f1: MeanStd,
    pub convergence_step: MeanStd,
    /// 95% t interval of the test macro-F1.
    pub test_macro_f1_ci: ConfidenceInterval,
}

pub fn aggregate(records: &[RunRecord]) -> Result<Aggregate> {
    if records.len() < 2 {
        return Err(Error::Config(format!(
            "aggregation needs at least 2 seeds, got {}",
            records.len()
        )));
    }
    let f1: Vec<f64> = records.iter().map(|r| r.test.macro_f1).collect();
    let steps: Vec<f64> = records.iter().map(|r| r.convergence_step as f64).collect();
    Ok(Aggregate {
        test_macro_f1: mean_std(&f1)?,
        convergence_step: mean_std(&steps)?,
        test_macro_f1_ci: confidence_interval(&f1)?,
    })
}

pub struct MultiSeedResult {
    pub records: Vec<RunRecord>,
    pub models: Vec<Model>,
    pub aggregate: Aggregate,
}

/// Sequential run over `cfg.seeds`.
pub fn multi_seed_run(encoder: EncoderConfig, data: &PreparedSplits, cfg: &TrainConfig) -> Result<MultiSeedResult> {
    if cfg.seeds.len() < 2 {
        return Err(Error::Config("multi-seed runs need at least 2 seeds".into()));
    }
    let mut records = Vec::with_capacity(cfg.seeds.len());
    let mut models = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let out = train(encoder, data, cfg, seed)?;
        records.push(out.record);
        models.push(out.model);
    }
    let aggregate = aggregate(&records)?;
    Ok(MultiSeedResult {
        records,
        models,
        aggregate,
    })
}
