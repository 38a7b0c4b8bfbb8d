//! Metrics and analyses: macro-F1, threshold sweep, t-based confidence
//! intervals, convergence speedup and token-level attention diffs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::Model;
use crate::numerics::{dot_product, math, softmax_row, Tensor};
use crate::text::TokenizedExample;
use crate::{Error, Result};

/// Binary confusion counts with class 1 as positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
        if preds.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == 1, l == 1) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Metrics of class `c` (1 = hateful, 0 = not hateful).
    pub fn class_metrics(&self, class: u8) -> ClassMetrics {
        let (tp, fp, fn_) = if class == 1 {
            (self.tp, self.fp, self.fn_)
        } else {
            (self.tn, self.fn_, self.fp)
        };
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        ClassMetrics {
            precision,
            recall,
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn macro_f1(&self) -> f64 {
        (self.class_metrics(0).f1 + self.class_metrics(1).f1) / 2.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub macro_f1: f64,
    /// Indexed by class: `[not hateful, hateful]`.
    pub classes: [ClassMetrics; 2],
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn at_threshold(probs: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
        let preds: Vec<u8> = probs
            .iter()
            .map(|&p| crate::relation::classify(p, threshold))
            .collect();
        let confusion = ConfusionMatrix::from_predictions(&preds, labels)?;
        Ok(MetricsReport {
            macro_f1: confusion.macro_f1(),
            classes: [confusion.class_metrics(0), confusion.class_metrics(1)],
            threshold,
            confusion,
        })
    }
}

/// Unweighted mean of the per-class F1 of both classes. A class absent from
/// both `preds` and `labels` scores 0.
pub fn macro_f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Input("macro_f1 of no predictions".into()));
    }
    Ok(ConfusionMatrix::from_predictions(preds, labels)?.macro_f1())
}

pub const N_THRESHOLDS: usize = 19;

/// 0.05, 0.10, ..., 0.95.
pub fn thresholds() -> [f64; N_THRESHOLDS] {
    core::array::from_fn(|k| (k + 1) as f64 / 20.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub best_threshold: f64,
    pub best_macro_f1: f64,
    /// `(threshold, macro-F1)` for every grid point.
    pub table: Vec<(f64, f64)>,
}

/// Evaluates every grid threshold and keeps the best; ties go to the lower
/// threshold.
pub fn threshold_sweep(probs: &[f64], labels: &[u8]) -> Result<SweepResult> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Input(format!("probability {p} outside [0, 1]")));
    }
    let mut table = Vec::with_capacity(N_THRESHOLDS);
    let mut best = (0.0, f64::NEG_INFINITY);
    for t in thresholds() {
        let preds: Vec<u8> = probs.iter().map(|&p| crate::relation::classify(p, t)).collect();
        let f1 = macro_f1(&preds, labels)?;
        table.push((t, f1));
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(SweepResult {
        best_threshold: best.0,
        best_macro_f1: best.1,
        table,
    })
}

/// Sample mean and standard deviation (`n - 1` denominator).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(MeanStd {
        mean,
        std: math::sqrt(ss / (n - 1) as f64),
        n,
    })
}

/// Two-sided 95% Student t critical values, indexed by degrees of freedom
/// 1..=30.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

/// `t_{0.025, df}` for `df` in 1..=30.
pub fn t_critical_95(df: usize) -> Result<f64> {
    df.checked_sub(1)
        .and_then(|i| T_975.get(i).copied())
        .ok_or_else(|| Error::Input(format!("no tabulated t value for {df} degrees of freedom")))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceInterval {
    fn from_stats(mean: f64, std: f64, n: usize, t: f64) -> ConfidenceInterval {
        let half = t * std / math::sqrt(n as f64);
        ConfidenceInterval {
            mean,
            std,
            n,
            t,
            lo: mean - half,
            hi: mean + half,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Interval as reported in results tables: mean and standard deviation
    /// are rounded to `decimals` first, the bounds are recomputed from those
    /// rounded values and rounded in turn.
    pub fn rounded(&self, decimals: u32) -> ConfidenceInterval {
        let mean = round_to(self.mean, decimals);
        let std = round_to(self.std, decimals);
        let ci = ConfidenceInterval::from_stats(mean, std, self.n, self.t);
        ConfidenceInterval {
            lo: round_to(ci.lo, decimals),
            hi: round_to(ci.hi, decimals),
            ..ci
        }
    }
}

/// `mean +- t_{0.025, n-1} * s / sqrt(n)` with the tabulated t value.
pub fn confidence_interval(scores: &[f64]) -> Result<ConfidenceInterval> {
    let t = t_critical_95(scores.len().saturating_sub(1))?;
    confidence_interval_with_t(scores, t)
}

/// Same as [`confidence_interval`] with a caller-supplied critical value.
pub fn confidence_interval_with_t(scores: &[f64], t: f64) -> Result<ConfidenceInterval> {
    let ms = mean_std(scores)?;
    Ok(ConfidenceInterval::from_stats(ms.mean, ms.std, ms.n, t))
}

/// Ratio of baseline to model convergence steps.
pub fn speedup(baseline_steps: u64, model_steps: u64) -> Result<f64> {
    if baseline_steps == 0 || model_steps == 0 {
        return Err(Error::Input("convergence steps must be positive".into()));
    }
    Ok(baseline_steps as f64 / model_steps as f64)
}

/// Half-away-from-zero rounding to `decimals` places.
pub fn round_to(x: f64, decimals: u32) -> f64 {
    let scale = libm::pow(10.0, f64::from(decimals));
    libm::round(x * scale) / scale
}

/// Linear-interpolation quantile of unsorted `values`; `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Default quantile above which a token counts as highlighted.
pub const DEFAULT_HIGHLIGHT_QUANTILE: f64 = 0.8;

/// `softmax(h0 . h_i / sqrt(d))` over the real tokens `i >= 1` of
/// final-layer embeddings `[(n + 1) x d]`.
pub fn cls_token_weights(hidden: &Tensor) -> Vec<f64> {
    let d = hidden.cols();
    let scale = 1.0 / math::sqrt(d as f64);
    let h0 = hidden.row(0);
    let mut w: Vec<f64> = (1..hidden.rows())
        .map(|i| scale * dot_product(h0, hidden.row(i)))
        .collect();
    softmax_row(&mut w);
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenAttention {
    pub token: String,
    pub weight_model: f64,
    pub weight_baseline: f64,
    pub diff: f64,
    pub highlighted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionReport {
    pub tokens: Vec<TokenAttention>,
    pub quantile: f64,
}

impl AttentionReport {
    pub fn highlighted(&self) -> impl Iterator<Item = &TokenAttention> {
        self.tokens.iter().filter(|t| t.highlighted)
    }
}

/// Compares `[CLS]`-to-token weights of two sets of final-layer embeddings
/// for the same sentence. A token is highlighted when its difference is
/// positive and strictly above the `quantile` of this sentence's
/// differences.
pub fn attention_diff_hidden(
    tokens: &[String],
    model_hidden: &Tensor,
    baseline_hidden: &Tensor,
    quantile_q: f64,
) -> Result<AttentionReport> {
    let n = tokens.len();
    if model_hidden.rows() != n + 1 || baseline_hidden.rows() != n + 1 {
        return Err(Error::Input(format!(
            "{n} tokens but hidden states with {} and {} rows",
            model_hidden.rows(),
            baseline_hidden.rows()
        )));
    }
    if !(0.0..=1.0).contains(&quantile_q) {
        return Err(Error::Config(format!("quantile {quantile_q} outside [0, 1]")));
    }
    let wm = cls_token_weights(model_hidden);
    let wb = cls_token_weights(baseline_hidden);
    let diffs: Vec<f64> = wm.iter().zip(&wb).map(|(a, b)| a - b).collect();
    let cut = quantile(&diffs, quantile_q).unwrap_or(0.0);
    let tokens = tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| TokenAttention {
            token: tok.clone(),
            weight_model: wm[i],
            weight_baseline: wb[i],
            diff: diffs[i],
            highlighted: diffs[i] > 0.0 && diffs[i] > cut,
        })
        .collect();
    Ok(AttentionReport {
        tokens,
        quantile: quantile_q,
    })
}

/// [`attention_diff_hidden`] on the final-layer embeddings of two models.
pub fn attention_diff(
    tokens: &[String],
    example: &TokenizedExample,
    model: &Model,
    baseline: &Model,
    quantile_q: f64,
) -> Result<AttentionReport> {
    if model.config() != baseline.config() {
        return Err(Error::Config("model and baseline configurations differ".into()));
    }
    let tokens = &tokens[..example.n_tokens().min(tokens.len())];
    attention_diff_hidden(
        tokens,
        &model.hidden_states(example)?,
        &baseline.hidden_states(example)?,
        quantile_q,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(macro_f1(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap(), 0.5);
        let m = macro_f1(&[1, 1], &[1, 0]).unwrap();
        assert!((m - 1.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&[1], &[1, 0]).is_err());
        assert!(macro_f1(&[], &[]).is_err());
    }

    #[test]
    fn absent_class_scores_zero() {
        // only class 1 present anywhere: F1_1 = 1, F1_0 = 0
        assert_eq!(macro_f1(&[1, 1], &[1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn sweep_grid_and_ties() {
        let t = thresholds();
        assert_eq!(t.len(), 19);
        assert_eq!(t[0], 0.05);
        assert_eq!(t[18], 0.95);
        let sweep = threshold_sweep(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(sweep.best_macro_f1, 1.0);
        assert_eq!(sweep.best_threshold, 0.25);
        assert_eq!(sweep.table.len(), 19);
        assert!(threshold_sweep(&[1.2], &[1]).is_err());
    }

    #[test]
    fn constant_probability_steps() {
        let labels = [0, 1, 0, 1];
        let probs = [0.5; 4];
        for t in thresholds() {
            let preds: Vec<u8> = probs.iter().map(|&p| crate::relation::classify(p, t)).collect();
            let expect = if t <= 0.5 { 1 } else { 0 };
            assert!(preds.iter().all(|&p| p == expect), "threshold {t}");
        }
        let _ = labels;
    }

    #[test]
    fn mean_std_closed_forms() {
        let ms = mean_std(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((ms.mean, ms.std), (3.0, 0.0));
        let (a, b) = (1.5, 4.0);
        let ms = mean_std(&[a, b]).unwrap();
        assert!((ms.mean - 2.75).abs() < 1e-15);
        assert!((ms.std - (b - a) / libm::sqrt(2.0)).abs() < 1e-15);
        assert!(mean_std(&[1.0]).is_err());
    }

    #[test]
    fn identical_scores_give_zero_width() {
        let ci = confidence_interval(&[80.0, 80.0, 80.0]).unwrap();
        assert_eq!((ci.lo, ci.hi), (80.0, 80.0));
        assert!(confidence_interval(&[80.0]).is_err());
    }

    #[test]
    fn speedup_rejects_zero() {
        assert!(speedup(0, 5).is_err());
        assert_eq!(speedup(7, 7).unwrap(), 1.0);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(quantile(&[0.0, 10.0], 0.8), Some(8.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn identical_hidden_states_highlight_nothing() {
        let h = Tensor::from_rows(&[[0.1, 0.2], [0.3, -0.1], [0.0, 0.5]]).unwrap();
        let toks = vec!["a".into(), "b".into()];
        let rep = attention_diff_hidden(&toks, &h, &h, 0.5).unwrap();
        assert!(rep.tokens.iter().all(|t| t.diff == 0.0 && !t.highlighted));
        let total: f64 = rep.tokens.iter().map(|t| t.weight_model).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
