//! Encoder plus classification head, with or without relation injection.

use alloc::format;
use alloc::vec::Vec;

use crate::encoder::{encode_batch, hidden_states, Batch, EncoderConfig, EncoderParams};
use crate::numerics::{Graph, Tensor, Var};
use crate::relation::{self, head_forward, ClassifierHead, RelationConfig, RelationOutput};
use crate::target::TargetMask;
use crate::text::TokenizedExample;
use crate::{Error, Result};

/// An encoded example together with its explicit target mask.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub example: &'a TokenizedExample,
    pub mask: &'a TargetMask,
}

/// Nodes recorded by [`Model::forward`].
pub struct ForwardNodes {
    /// `[batch x 2]` classifier logits.
    pub logits: Var,
    pub hidden: Var,
    pub attention: Vec<Var>,
    /// Explicit-target attention weights per example (when computed).
    pub relation_weights: Vec<Option<Var>>,
    pub batch: Batch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: EncoderParams,
    /// `None` bypasses the relation head: the classifier reads `h0` directly.
    pub head: Option<RelationConfig>,
}

const EVAL_CHUNK: usize = 64;

impl Model {
    pub fn new(params: EncoderParams, head: Option<RelationConfig>) -> Result<Model> {
        if let Some(h) = &head {
            h.validate()?;
        }
        Ok(Model { params, head })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.params.config()
    }

    pub fn classifier(&self) -> ClassifierHead<'_> {
        let layout = self.params.layout();
        let t = self.params.tensors();
        ClassifierHead {
            weight: &t[layout.classifier_weight()],
            bias: &t[layout.classifier_bias()],
        }
    }

    /// Records the full forward pass for `inputs` on `g`, using the
    /// parameter nodes `vars` (see [`EncoderParams::bind`]).
    pub fn forward(&self, g: &mut Graph, vars: &[Var], inputs: &[ModelInput<'_>]) -> Result<ForwardNodes> {
        let examples: Vec<&TokenizedExample> = inputs.iter().map(|i| i.example).collect();
        let batch = Batch::new(&examples)?;
        for input in inputs {
            if input.mask.len() != input.example.n_tokens() {
                return Err(Error::Input(format!(
                    "target mask covers {} tokens, example has {}",
                    input.mask.len(),
                    input.example.n_tokens()
                )));
            }
        }
        let enc = encode_batch(g, vars, self.config(), &batch)?;
        let layout = self.params.layout();
        let mut relation_weights = Vec::with_capacity(inputs.len());
        let z = match &self.head {
            None => {
                let rows: Vec<usize> = (0..inputs.len()).map(|b| batch.row(b, 0)).collect();
                relation_weights.resize(inputs.len(), None);
                g.gather_rows(enc.hidden, &rows)?
            }
            Some(cfg) => {
                let mut zs = Vec::with_capacity(inputs.len());
                for (b, input) in inputs.iter().enumerate() {
                    let targets: Vec<usize> = input
                        .mask
                        .indices()
                        .into_iter()
                        .map(|i| batch.row(b, i + 1))
                        .collect();
                    let nodes = head_forward(g, enc.hidden, batch.row(b, 0), &targets, cfg)?;
                    zs.push(nodes.z);
                    relation_weights.push(nodes.weights_exp);
                }
                g.concat_rows(&zs)?
            }
        };
        let logits = g.matmul(z, vars[layout.classifier_weight()])?;
        let logits = g.add_row(logits, vars[layout.classifier_bias()])?;
        Ok(ForwardNodes {
            logits,
            hidden: enc.hidden,
            attention: enc.attention,
            relation_weights,
            batch,
        })
    }

    /// Mean cross-entropy of `inputs` against their labels.
    pub fn loss(&self, g: &mut Graph, vars: &[Var], inputs: &[ModelInput<'_>]) -> Result<(Var, ForwardNodes)> {
        let nodes = self.forward(g, vars, inputs)?;
        let labels: Vec<usize> = inputs.iter().map(|i| usize::from(i.example.label)).collect();
        let loss = g.cross_entropy(nodes.logits, &labels)?;
        Ok((loss, nodes))
    }

    /// Classifier logits for every input, evaluated in chunks without
    /// gradient tracking.
    pub fn logits(&self, inputs: &[ModelInput<'_>]) -> Result<Vec<[f64; 2]>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let vars = self.params.bind_constants(&mut g);
            let nodes = self.forward(&mut g, &vars, chunk)?;
            let l = g.value(nodes.logits);
            out.extend((0..l.rows()).map(|i| [l.get(i, 0), l.get(i, 1)]));
        }
        Ok(out)
    }

    /// Probability of the hateful class for every input.
    pub fn predict_proba(&self, inputs: &[ModelInput<'_>]) -> Result<Vec<f64>> {
        Ok(self
            .logits(inputs)?
            .into_iter()
            .map(|l| relation::softmax2(l)[1])
            .collect())
    }

    /// Final-layer embeddings `[(n + 1) x d]` of one example.
    pub fn hidden_states(&self, example: &TokenizedExample) -> Result<Tensor> {
        hidden_states(&self.params, example)
    }

    /// Head outputs computed outside the graph; `None` for the bypass model.
    pub fn relation_output(&self, input: ModelInput<'_>) -> Result<Option<RelationOutput>> {
        let Some(cfg) = &self.head else {
            return Ok(None);
        };
        let hidden = self.hidden_states(input.example)?;
        relation::inject(&hidden, input.mask, cfg, self.classifier()).map(Some)
    }
}
