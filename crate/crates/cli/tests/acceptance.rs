//! Acceptance checks: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so that every line is
//! printed even when all checks pass. Exits non-zero if any check fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hatelens::checkpoint::Checkpoint;
use hatelens::formats::{load_corpus, load_vocab, save_corpus, SplitManifest};
use hatelens::report::AblationReport;
use hatelens_core::data::{default_lexicon, gen_synthetic};
use hatelens_core::encoder::{EncoderConfig, EncoderParams};
use hatelens_core::eval::{
    attention_diff, confidence_interval, speedup, threshold_sweep, MetricsReport,
};
use hatelens_core::model::{Model, ModelInput};
use hatelens_core::numerics::{grad_check, Graph};
use hatelens_core::optim::AdamWConfig;
use hatelens_core::relation::ValueSource;
use hatelens_core::target::TargetMask;
use hatelens_core::text::{tokenize, TokenizedExample, Vocab, CLS_ID};
use hatelens_core::training::{prepare_example, PreparedExample, TargetMode, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn small_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 100,
        max_len: 24,
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ff: 32,
    }
}

fn random_input(rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> (TokenizedExample, TargetMask) {
    let n = rng.random_range(0..cfg.max_len);
    let mut ids = vec![CLS_ID];
    ids.extend((0..n).map(|_| rng.random_range(3..cfg.vocab_size)));
    ids.resize(cfg.max_len, 0);
    let ex = TokenizedExample {
        attn_mask: (0..cfg.max_len).map(|i| u8::from(i <= n)).collect(),
        ids,
        label: rng.random_range(0..2),
        offsets: (0..n).map(|i| (i, i + 1)).collect(),
    };
    let mask = TargetMask::from_flags((0..n).map(|_| rng.random_bool(0.3)).collect());
    (ex, mask)
}

fn as_inputs(pairs: &[(TokenizedExample, TargetMask)]) -> Vec<ModelInput<'_>> {
    pairs.iter().map(|(e, m)| ModelInput { example: e, mask: m }).collect()
}

/// Weights of the given scale on top of the initialisation so that every
/// parameter carries a visible gradient.
fn perturbed_params(cfg: EncoderConfig, seed: u64, scale: f64) -> EncoderParams {
    let mut params = EncoderParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
    params
}

fn c1_injection_identity() -> Outcome {
    let start = Instant::now();
    let cfg = small_config();
    let params = perturbed_params(cfg, 1, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<_> = (0..1000).map(|_| random_input(&mut rng, &cfg)).collect();
    let inputs = as_inputs(&pairs);
    let baseline = Model::new(params.clone(), None).unwrap().logits(&inputs).unwrap();
    let injected = Model::new(params, TargetMode::Both.head(0.0, ValueSource::Targets))
        .unwrap()
        .logits(&inputs)
        .unwrap();
    let mismatches = baseline
        .iter()
        .zip(&injected)
        .filter(|(a, b)| a[0].to_bits() != b[0].to_bits() || a[1].to_bits() != b[1].to_bits())
        .count();
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("{mismatches} of 1000 logit pairs differ bitwise; {:.2}s (limit 10s)", elapsed.as_secs_f64()),
    )
}

fn c2_gradients() -> Outcome {
    let start = Instant::now();
    let cfg = EncoderConfig {
        max_len: 64,
        ..small_config()
    };
    let params = perturbed_params(cfg, 2, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<_> = (0..4).map(|_| random_input(&mut rng, &cfg)).collect();
    let model = Model::new(params.clone(), TargetMode::Both.head(1.0, ValueSource::Targets)).unwrap();
    let report = grad_check(params.tensors(), 1e-5, |g: &mut Graph, vars| {
        Ok(model.loss(g, vars, &as_inputs(&pairs))?.0)
    })
    .unwrap();
    let elapsed = start.elapsed();
    outcome(
        report.max_rel_error < 1e-4 && elapsed < Duration::from_secs(120),
        format!(
            "{} parameters, max relative error {:.2e} (limit 1e-4); {:.1}s (limit 120s)",
            report.checked,
            report.max_rel_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn c3_attention_normalization() -> Outcome {
    let cfg = small_config();
    let mut worst = 0.0f64;
    let mut rows = 0usize;
    for pass in 0..1000u64 {
        let params = perturbed_params(cfg, pass, 0.5);
        let model = Model::new(params.clone(), TargetMode::Both.head(1.0, ValueSource::Targets)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(pass);
        let pairs: Vec<_> = (0..2).map(|_| random_input(&mut rng, &cfg)).collect();
        let inputs = as_inputs(&pairs);
        let mut g = Graph::new();
        let vars = params.bind_constants(&mut g);
        let nodes = model.forward(&mut g, &vars, &inputs).unwrap();
        for w in nodes.relation_weights.iter().flatten() {
            worst = worst.max((g.value(*w).data().iter().sum::<f64>() - 1.0).abs());
            rows += 1;
        }
        let len = nodes.batch.layout.len;
        for &att in &nodes.attention {
            for row in g.attention_weights(att).unwrap().chunks(len) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                rows += 1;
            }
        }
    }
    outcome(worst <= 1e-12, format!("{rows} rows over 1000 passes, max |sum - 1| = {worst:.1e} (limit 1e-12)"))
}

fn c4_confidence_intervals() -> Outcome {
    let a = confidence_interval(&[82.31, 81.63, 81.87]).unwrap().rounded(2);
    let b = confidence_interval(&[93.83, 92.60, 93.21]).unwrap().rounded(2);
    let checks = [
        (a.mean, 81.94),
        (a.std, 0.34),
        (a.lo, 81.10),
        (a.hi, 82.78),
        (b.lo, 91.67),
        (b.hi, 94.75),
    ];
    let worst = checks.iter().map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 0.01 + 1e-9,
        format!(
            "{:.2} ± {:.2} [{:.2}, {:.2}] and [{:.2}, {:.2}]; max deviation {worst:.3} (limit 0.01)",
            a.mean, a.std, a.lo, a.hi, b.lo, b.hi
        ),
    )
}

fn c5_speedups() -> Outcome {
    let cases = [(1286, 380, 3.38), (1358, 1646, 0.83), (256, 126, 2.03)];
    let got: Vec<f64> = cases.iter().map(|&(a, b, _)| speedup(a, b).unwrap()).collect();
    let worst = cases.iter().zip(&got).map(|(c, g)| (g - c.2).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 0.01,
        format!("{:.4}, {:.4}, {:.4}; max deviation {worst:.4} (limit 0.01)", got[0], got[1], got[2]),
    )
}

fn c6_threshold_sweep() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    let mut wrong_size = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..100);
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let sweep = threshold_sweep(&probs, &labels).unwrap();
        let at_half = MetricsReport::at_threshold(&probs, &labels, 0.5).unwrap().macro_f1;
        wrong_size += usize::from(sweep.table.len() != 19);
        violations += usize::from(sweep.best_macro_f1 < at_half);
    }
    outcome(
        violations == 0 && wrong_size == 0,
        format!("1000 random inputs: {wrong_size} sweeps without 19 thresholds, {violations} below F1@0.5"),
    )
}

fn hatelens(args: &[&str], out_dir: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hatelens"));
    cmd.args(args);
    if let Some(dir) = out_dir {
        cmd.env(hatelens::cli::OUT_DIR_ENV, dir);
    }
    cmd.output().expect("hatelens binary runs")
}

struct Ablation {
    dir: PathBuf,
    corpus: PathBuf,
}

fn c7_ablation(work: &Path) -> (Outcome, Option<Ablation>) {
    let start = Instant::now();
    let corpus = work.join("synthetic.jsonl");
    save_corpus(&corpus, &gen_synthetic(2500, 7, &default_lexicon()).unwrap()).unwrap();
    let dir = work.join("ablation");
    let out = hatelens(
        &[
            "ablate",
            "--corpus",
            corpus.to_str().unwrap(),
            "--seeds",
            "1,2,3",
            "--out-dir",
            dir.to_str().unwrap(),
        ],
        None,
    );
    let elapsed = start.elapsed();
    if !out.status.success() {
        return (outcome(false, format!("ablate failed: {}", String::from_utf8_lossy(&out.stderr))), None);
    }
    print!("{}", String::from_utf8_lossy(&out.stdout));
    let report: AblationReport =
        serde_json::from_str(&std::fs::read_to_string(dir.join("ablation.json")).unwrap()).unwrap();
    let f1 = |mode: &str| {
        100.0 * report.rows.iter().find(|r| r.target_mode == mode).expect("mode row").test_macro_f1_mean
    };
    let (none, imp, exp, both) = (f1("none"), f1("implicit"), f1("explicit"), f1("both"));
    let sizes = SplitManifest::load(&dir.join("both/splits.json")).unwrap();
    let sized = (sizes.train.len(), sizes.valid.len(), sizes.test.len()) == (2000, 250, 250);
    let pass = sized
        && report.seeds_identical
        && both >= imp.max(exp)
        && imp.max(exp) >= none
        && both - none >= 2.0
        && elapsed < Duration::from_secs(15 * 60);
    (
        outcome(
            pass,
            format!(
                "both {both:.2} >= max(implicit {imp:.2}, explicit {exp:.2}) >= none {none:.2}, margin {:.2} (min 2.00); splits {}/{}/{}; {:.0}s (limit 900s)",
                both - none,
                sizes.train.len(),
                sizes.valid.len(),
                sizes.test.len(),
                elapsed.as_secs_f64()
            ),
        ),
        Some(Ablation { dir, corpus }),
    )
}

fn c8_determinism(work: &Path) -> Outcome {
    let corpus = work.join("determinism.jsonl");
    save_corpus(&corpus, &gen_synthetic(300, 11, &default_lexicon()).unwrap()).unwrap();
    let args = [
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--target-mode",
        "random20",
        "--seeds",
        "1,2",
        "--epochs",
        "2",
        "--eval-every",
        "5",
        "--d-model",
        "32",
        "--d-ff",
        "64",
    ];
    let (a, b) = (work.join("det-a"), work.join("det-b"));
    let ra = hatelens(&args, Some(&a));
    let rb = hatelens(&args, Some(&b));
    if !(ra.status.success() && rb.status.success()) {
        return outcome(false, "train invocation failed");
    }
    let sa = std::fs::read(a.join("summary.json")).unwrap();
    let sb = std::fs::read(b.join("summary.json")).unwrap();
    outcome(sa == sb, format!("summary.json {} bytes each, byte-identical: {}", sa.len(), sa == sb))
}

fn c9_overfit() -> Outcome {
    let lexicon = default_lexicon();
    let records = gen_synthetic(16, 9, &lexicon).unwrap();
    let vocab = Vocab::build(records.iter().map(|r| r.text.as_str()), 1).unwrap();
    let examples: Vec<PreparedExample> =
        records.iter().map(|r| prepare_example(r, &vocab, 64, None).unwrap()).collect();
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        ..EncoderConfig::default()
    };
    let model = Model::new(
        EncoderParams::init(cfg, 9).unwrap(),
        TargetMode::Both.head(1.0, ValueSource::Targets),
    )
    .unwrap();
    let mut trainer = Trainer::new(
        model,
        AdamWConfig {
            lr: 1e-3,
            ..AdamWConfig::default()
        },
    );
    let inputs: Vec<_> = examples.iter().map(PreparedExample::input).collect();
    let mut loss = f64::INFINITY;
    while trainer.steps() < 200 && loss >= 0.01 {
        loss = trainer.step(&inputs).unwrap();
    }
    outcome(loss < 0.01, format!("loss {loss:.2e} after {} steps (limit 0.01 within 200)", trainer.steps()))
}

fn c10_cls_degeneracy() -> Outcome {
    let cfg = small_config();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..200u64 {
        let model = Model::new(
            perturbed_params(cfg, seed, 0.5),
            TargetMode::Both.head(1.0, ValueSource::Cls),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ex, mask) = random_input(&mut rng, &cfg);
        if mask.count() == 0 {
            continue;
        }
        let h0 = model.hidden_states(&ex).unwrap().row(0).to_vec();
        let out = model.relation_output(ModelInput { example: &ex, mask: &mask }).unwrap().unwrap();
        for (r, h) in out.r_exp.iter().chain(&out.r_imp).zip(h0.iter().chain(&h0)) {
            worst = worst.max((r - h).abs());
        }
        checked += 1;
    }
    outcome(worst <= 1e-12, format!("{checked} examples with targets, max |r - h0| = {worst:.1e} (limit 1e-12)"))
}

fn c11_attention_direction(ablation: Option<&Ablation>) -> Outcome {
    let Some(ab) = ablation else {
        return outcome(false, "no trained models (ablation failed)");
    };
    let manifest = SplitManifest::load(&ab.dir.join("both/splits.json")).unwrap();
    let records = load_corpus(&ab.corpus).unwrap();
    let test = manifest.apply(&records).unwrap().test;
    let vocab = load_vocab(&ab.dir.join("both/vocab.txt")).unwrap();
    let lexicon = default_lexicon();
    let (mut ent_sum, mut ent_n, mut other_sum, mut other_n) = (0.0, 0usize, 0.0, 0usize);
    let mut per_seed = Vec::new();
    for seed in 1..=3 {
        let model = Checkpoint::load(&ab.dir.join(format!("both/seed-{seed}.ckpt"))).unwrap().model().unwrap();
        let baseline = Checkpoint::load(&ab.dir.join(format!("none/seed-{seed}.ckpt"))).unwrap().model().unwrap();
        let (mut es, mut en, mut os, mut on) = (0.0, 0usize, 0.0, 0usize);
        for r in &test {
            let e = prepare_example(r, &vocab, 64, None).unwrap();
            let entity = lexicon.tag(&tokenize(&r.text));
            let report = attention_diff(&e.tokens, &e.example, &model, &baseline, 0.8).unwrap();
            for (i, t) in report.tokens.iter().enumerate() {
                if entity.flags()[i] {
                    es += t.diff;
                    en += 1;
                } else {
                    os += t.diff;
                    on += 1;
                }
            }
        }
        per_seed.push(format!("seed {seed}: {:+.2e} vs {:+.2e}", es / en as f64, os / on as f64));
        ent_sum += es;
        ent_n += en;
        other_sum += os;
        other_n += on;
    }
    let (ent, other) = (ent_sum / ent_n as f64, other_sum / other_n as f64);
    outcome(
        ent > other,
        format!(
            "mean diff entity {ent:+.3e} > non-entity {other:+.3e} over {ent_n}/{other_n} tokens ({})",
            per_seed.join("; ")
        ),
    )
}

fn main() {
    let work = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("[{}] criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "injection identity", c1_injection_identity());
    report(2, "gradient correctness", c2_gradients());
    report(3, "attention normalization", c3_attention_normalization());
    report(4, "confidence intervals", c4_confidence_intervals());
    report(5, "speedup arithmetic", c5_speedups());
    report(6, "threshold sweep", c6_threshold_sweep());
    let (o7, ablation) = c7_ablation(work.path());
    report(7, "ablation direction", o7);
    report(8, "determinism", c8_determinism(work.path()));
    report(9, "overfit sanity", c9_overfit());
    report(10, "cls-mode degeneracy", c10_cls_degeneracy());
    report(11, "attention-diff direction", c11_attention_direction(ablation.as_ref()));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
