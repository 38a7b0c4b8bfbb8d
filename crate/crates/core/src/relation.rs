//! Relation head: relates the `[CLS]` embedding to its explicit and implicit
//! targets with scaled dot-product attention, adds the amplified relation
//! vector onto `[CLS]`, and classifies.
//!
//! Two routes compute the same thing. The plain functions here work on
//! finished hidden states and are used for inspection; [`head_forward`]
//! records the identical arithmetic on the autodiff graph for training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{math, Graph, Tensor, Var};
use crate::target::TargetMask;
use crate::{Error, Result};

/// The amplification grid explored for the injection strength.
pub const LAMBDA_GRID: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// What the attention weights average over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ValueSource {
    /// `V = H_tgt`: weighted mean of the target embeddings.
    #[default]
    Targets,
    /// `V = h0`: every key carries the `[CLS]` embedding, so the result is
    /// always `h0` itself.
    Cls,
}

impl ValueSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueSource::Targets => "targets",
            ValueSource::Cls => "cls",
        }
    }

    pub fn parse(s: &str) -> Result<ValueSource> {
        match s {
            "targets" => Ok(ValueSource::Targets),
            "cls" => Ok(ValueSource::Cls),
            other => Err(Error::Config(format!(
                "unknown value source {other:?} (expected targets or cls)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationConfig {
    pub lambda: f64,
    pub value_source: ValueSource,
    pub use_explicit: bool,
    pub use_implicit: bool,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig {
            lambda: DEFAULT_LAMBDA,
            value_source: ValueSource::Targets,
            use_explicit: true,
            use_implicit: true,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda {} outside [0, 2]",
                self.lambda
            )));
        }
        if !self.use_explicit && !self.use_implicit {
            return Err(Error::Config(
                "relation head needs explicit or implicit targets".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the head computed for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationOutput {
    pub r_exp: Vec<f64>,
    pub r_imp: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    /// Attention over explicit targets; empty when there are none.
    pub weights_exp: Vec<f64>,
    pub logits: [f64; 2],
    pub prob_hate: f64,
}

/// Borrowed classifier parameters: weight `[d x 2]`, bias `[1 x 2]`.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierHead<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
}

impl ClassifierHead<'_> {
    pub fn logits(&self, z: &[f64]) -> Result<[f64; 2]> {
        let (d, c) = self.weight.shape();
        if z.len() != d || c != 2 || self.bias.shape() != (1, 2) {
            return Err(Error::Dimension {
                op: "classifier",
                lhs: (1, z.len()),
                rhs: (d, c),
            });
        }
        let out = Tensor::row_vector(z).matmul(self.weight)?;
        Ok([
            out.data()[0] + self.bias.data()[0],
            out.data()[1] + self.bias.data()[1],
        ])
    }
}

/// Rows of `hidden` at the flagged positions, in order. Mask index `i`
/// refers to row `i + 1` (row 0 is `[CLS]`).
pub fn gather_explicit(hidden: &Tensor, mask: &TargetMask) -> Tensor {
    let rows: Vec<usize> = mask.indices().into_iter().map(|i| i + 1).collect();
    hidden.select_rows(&rows)
}

/// Attention of `h0` over the rows of `targets`.
///
/// Returns the relation vector and the softmax weights
/// `softmax(h0 . t / sqrt(d))`.
pub fn relation_vector(
    h0: &[f64],
    targets: &Tensor,
    value_source: ValueSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (k, d) = targets.shape();
    if k == 0 {
        return Err(Error::Input("relation_vector needs at least one target".into()));
    }
    if d != h0.len() {
        return Err(Error::Dimension {
            op: "relation_vector",
            lhs: (1, h0.len()),
            rhs: (k, d),
        });
    }
    let scale = 1.0 / math::sqrt(d as f64);
    let mut weights: Vec<f64> = (0..k)
        .map(|t| scale * crate::numerics::dot_product(h0, targets.row(t)))
        .collect();
    crate::numerics::softmax_row(&mut weights);
    let mut r = vec![0.0; d];
    for (t, &w) in weights.iter().enumerate() {
        let value = match value_source {
            ValueSource::Targets => targets.row(t),
            ValueSource::Cls => h0,
        };
        for (ri, vi) in r.iter_mut().zip(value) {
            *ri += w * vi;
        }
    }
    Ok((r, weights))
}

/// Full head on one example's hidden states `[(n + 1) x d]`.
///
/// An empty explicit target set contributes a zero `r_exp`.
pub fn inject(
    hidden: &Tensor,
    mask: &TargetMask,
    config: &RelationConfig,
    classifier: ClassifierHead<'_>,
) -> Result<RelationOutput> {
    config.validate()?;
    let d = hidden.cols();
    if hidden.rows() == 0 || mask.len() + 1 > hidden.rows() {
        return Err(Error::Input(format!(
            "mask over {} tokens does not fit {} hidden rows",
            mask.len(),
            hidden.rows()
        )));
    }
    let h0 = hidden.row(0);
    let mut r_exp = vec![0.0; d];
    let mut r_imp = vec![0.0; d];
    let mut weights_exp = Vec::new();
    if config.use_implicit {
        let key = Tensor::row_vector(h0);
        r_imp = relation_vector(h0, &key, config.value_source)?.0;
    }
    if config.use_explicit && mask.count() > 0 {
        let targets = gather_explicit(hidden, mask);
        let (r, w) = relation_vector(h0, &targets, config.value_source)?;
        r_exp = r;
        weights_exp = w;
    }
    let r: Vec<f64> = match (config.use_explicit, config.use_implicit) {
        (true, true) => r_exp.iter().zip(&r_imp).map(|(a, b)| a + b).collect(),
        (true, false) => r_exp.clone(),
        _ => r_imp.clone(),
    };
    let z: Vec<f64> = h0
        .iter()
        .zip(&r)
        .map(|(h, ri)| h + config.lambda * ri)
        .collect();
    let logits = classifier.logits(&z)?;
    let prob_hate = softmax2(logits)[1];
    Ok(RelationOutput {
        r_exp,
        r_imp,
        r,
        z,
        weights_exp,
        logits,
        prob_hate,
    })
}

/// Logits of the plain `[CLS]` classifier without any injection.
pub fn bypass_logits(hidden: &Tensor, classifier: ClassifierHead<'_>) -> Result<[f64; 2]> {
    classifier.logits(hidden.row(0))
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let mut row = logits;
    crate::numerics::softmax_row(&mut row);
    row
}

/// 1 iff `prob_hate >= threshold`.
pub fn classify(prob_hate: f64, threshold: f64) -> u8 {
    u8::from(prob_hate >= threshold)
}

/// Graph nodes for one example's relation computation.
pub struct HeadNodes {
    pub z: Var,
    /// Softmax weights over explicit targets (`1 x k`), if any.
    pub weights_exp: Option<Var>,
}

/// Records the head for one example on the graph. `hidden` holds the whole
/// flattened batch; `cls_row` is this example's `[CLS]` row and
/// `target_rows` its flagged rows.
pub fn head_forward(
    g: &mut Graph,
    hidden: Var,
    cls_row: usize,
    target_rows: &[usize],
    config: &RelationConfig,
) -> Result<HeadNodes> {
    let d = g.shape(hidden).1;
    let scale = 1.0 / math::sqrt(d as f64);
    let h0 = g.gather_rows(hidden, &[cls_row])?;

    let attend = |g: &mut Graph, key_rows: &[usize]| -> Result<(Var, Var)> {
        let keys = g.gather_rows(hidden, key_rows)?;
        let scores = g.matmul_transb(h0, keys)?;
        let scores = g.scale(scores, scale);
        let weights = g.row_softmax(scores)?;
        let values = match config.value_source {
            ValueSource::Targets => keys,
            ValueSource::Cls => g.gather_rows(hidden, &vec![cls_row; key_rows.len()])?,
        };
        Ok((g.matmul(weights, values)?, weights))
    };

    let r_imp = if config.use_implicit {
        Some(attend(g, &[cls_row])?.0)
    } else {
        None
    };
    let (r_exp, weights_exp) = if config.use_explicit && !target_rows.is_empty() {
        let (r, w) = attend(g, target_rows)?;
        (Some(r), Some(w))
    } else {
        (None, None)
    };
    let r = match (r_exp, r_imp) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };
    let z = match r {
        Some(r) => {
            let amplified = g.scale(r, config.lambda);
            g.add(h0, amplified)?
        }
        // explicit-only head with no targets: r = 0, z = h0 + lambda * 0
        None => {
            let zero = g.constant(Tensor::zeros(1, d));
            g.add(h0, zero)?
        }
    };
    Ok(HeadNodes { z, weights_exp })
}
