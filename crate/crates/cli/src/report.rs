//! Serializable run records, summaries and human-readable tables.

use std::fmt::Write as _;

use hatelens_core::eval::{round_to, ConfidenceInterval, MeanStd, MetricsReport};
use hatelens_core::relation::RelationOutput;
use hatelens_core::training::{Aggregate, RunRecord};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassJson {
    pub class: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionJson {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub macro_f1: f64,
    pub threshold: f64,
    pub classes: Vec<ClassJson>,
    pub confusion: ConfusionJson,
}

impl From<&MetricsReport> for MetricsJson {
    fn from(m: &MetricsReport) -> Self {
        MetricsJson {
            macro_f1: m.macro_f1,
            threshold: m.threshold,
            classes: m
                .classes
                .iter()
                .enumerate()
                .map(|(c, cm)| ClassJson {
                    class: c as u8,
                    precision: cm.precision,
                    recall: cm.recall,
                    f1: cm.f1,
                })
                .collect(),
            confusion: ConfusionJson {
                tp: m.confusion.tp,
                fp: m.confusion.fp,
                tn: m.confusion.tn,
                fn_: m.confusion.fn_,
            },
        }
    }
}

/// One line of a run's trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub seed: u64,
    pub target_mode: String,
    pub step: usize,
    pub train_loss: f64,
    pub valid_macro_f1: f64,
    pub valid_threshold: f64,
}

pub fn trace_lines(record: &RunRecord) -> String {
    let mut out = String::new();
    for p in &record.trace {
        let line = TraceLine {
            seed: record.seed,
            target_mode: record.target_mode.as_str().to_string(),
            step: p.step,
            train_loss: p.train_loss,
            valid_macro_f1: p.valid_macro_f1,
            valid_threshold: p.valid_threshold,
        };
        out.push_str(&serde_json::to_string(&line).expect("trace lines serialize"));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub dataset: String,
    pub metrics: MetricsJson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunJson {
    pub seed: u64,
    pub target_mode: String,
    pub total_steps: usize,
    pub eval_every: usize,
    pub convergence_step: usize,
    pub best_valid_macro_f1: f64,
    pub best_threshold: f64,
    pub test: MetricsJson,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_by_dataset: Vec<DatasetMetrics>,
}

impl From<&RunRecord> for RunJson {
    fn from(r: &RunRecord) -> Self {
        RunJson {
            seed: r.seed,
            target_mode: r.target_mode.as_str().to_string(),
            total_steps: r.total_steps,
            eval_every: r.eval_every,
            convergence_step: r.convergence_step,
            best_valid_macro_f1: r.best_valid_macro_f1,
            best_threshold: r.best_threshold,
            test: (&r.test).into(),
            test_by_dataset: r
                .test_by_dataset
                .iter()
                .map(|(d, m)| DatasetMetrics {
                    dataset: d.clone(),
                    metrics: m.into(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStdJson {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl From<MeanStd> for MeanStdJson {
    fn from(m: MeanStd) -> Self {
        MeanStdJson {
            mean: m.mean,
            std: m.std,
            n: m.n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalJson {
    pub mean: f64,
    pub std: f64,
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<ConfidenceInterval> for IntervalJson {
    fn from(c: ConfidenceInterval) -> Self {
        IntervalJson {
            mean: c.mean,
            std: c.std,
            t: c.t,
            lo: c.lo,
            hi: c.hi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateJson {
    pub test_macro_f1: MeanStdJson,
    pub convergence_step: MeanStdJson,
    pub test_macro_f1_ci: IntervalJson,
    /// Same interval on the percentage scale, rounded to 2 decimals the way
    /// results tables report it.
    pub test_macro_f1_ci_percent: IntervalJson,
}

impl From<&Aggregate> for AggregateJson {
    fn from(a: &Aggregate) -> Self {
        let ci = a.test_macro_f1_ci;
        let percent = ConfidenceInterval {
            mean: 100.0 * ci.mean,
            std: 100.0 * ci.std,
            lo: 100.0 * ci.lo,
            hi: 100.0 * ci.hi,
            ..ci
        };
        AggregateJson {
            test_macro_f1: a.test_macro_f1.into(),
            convergence_step: a.convergence_step.into(),
            test_macro_f1_ci: ci.into(),
            test_macro_f1_ci_percent: percent.rounded(2).into(),
        }
    }
}

/// Configuration echoed into every summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfigJson {
    pub corpora: Vec<String>,
    pub target_mode: String,
    pub lambda: f64,
    pub value_source: String,
    pub seeds: Vec<u64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub weight_decay: f64,
    pub split_seed: u64,
    pub split: [f64; 3],
    pub min_freq: usize,
    pub target_source: String,
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: RunConfigJson,
    pub records: Vec<RunJson>,
    pub aggregate: Option<AggregateJson>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summaries serialize");
        s.push('\n');
        s
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", round_to(100.0 * x, 2))
}

/// Per-seed table plus the aggregate line, for standard output.
pub fn metrics_table(summary: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:<9} {:>10} {:>9} {:>10} {:>8}",
        "seed", "mode", "conv_step", "valid_f1", "threshold", "test_f1"
    );
    for r in &summary.records {
        let _ = writeln!(
            out,
            "{:<6} {:<9} {:>10} {:>9} {:>10.2} {:>8}",
            r.seed,
            r.target_mode,
            r.convergence_step,
            pct(r.best_valid_macro_f1),
            r.best_threshold,
            pct(r.test.macro_f1)
        );
        for d in &r.test_by_dataset {
            let _ = writeln!(out, "{:<6} {:<9} {:>10} {:>9} {:>10} {:>8}  [{}]", "", "", "", "", "", pct(d.metrics.macro_f1), d.dataset);
        }
    }
    if let Some(a) = &summary.aggregate {
        let ci = &a.test_macro_f1_ci_percent;
        let _ = writeln!(
            out,
            "test macro-F1 {:.2} ± {:.2} (95% CI [{:.2}, {:.2}]), convergence step {:.1} ± {:.1}",
            ci.mean, ci.std, ci.lo, ci.hi, a.convergence_step.mean, a.convergence_step.std
        );
    }
    out
}

/// One row of the five-mode comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub target_mode: String,
    pub seeds: Vec<u64>,
    pub test_macro_f1_mean: f64,
    pub test_macro_f1_std: f64,
    pub convergence_step_mean: f64,
    pub anchor: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// True when every row was trained on exactly the same seeds.
    pub seeds_identical: bool,
}

impl AblationReport {
    pub fn new(rows: Vec<AblationRow>) -> AblationReport {
        let seeds_identical = rows.windows(2).all(|w| w[0].seeds == w[1].seeds);
        AblationReport { rows, seeds_identical }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ablation report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<11} {:>15} {:>10}", "targets", "macro-F1", "step");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<11} {:>15} {:>10.1}{}",
                r.target_mode,
                format!("{} ± {}", pct(r.test_macro_f1_mean), pct(r.test_macro_f1_std)),
                r.convergence_step_mean,
                if r.anchor { "  <- anchor" } else { "" }
            );
        }
        let seeds = self.rows.first().map(|r| r.seeds.clone()).unwrap_or_default();
        let _ = writeln!(
            out,
            "seeds {:?} {}",
            seeds,
            if self.seeds_identical { "(identical across rows)" } else { "(DIFFER across rows)" }
        );
        out
    }
}

/// Head outputs of one example as a line-delimited record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationLine {
    pub id: String,
    pub r_exp: Vec<f64>,
    pub r_imp: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub weights_exp: Vec<f64>,
    pub logits: [f64; 2],
    pub prob_hate: f64,
}

impl RelationLine {
    pub fn new(id: &str, out: &RelationOutput) -> RelationLine {
        RelationLine {
            id: id.to_string(),
            r_exp: out.r_exp.clone(),
            r_imp: out.r_imp.clone(),
            r: out.r.clone(),
            z: out.z.clone(),
            weights_exp: out.weights_exp.clone(),
            logits: out.logits,
            prob_hate: out.prob_hate,
        }
    }
}
