//! Pre-norm Transformer encoder built on the autodiff graph.
//!
//! Parameters are stored as a flat list of tensors in a fixed declaration
//! order (embeddings, then each layer, then the classifier). That order is
//! shared by the optimizer state and the checkpoint format.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::{Graph, SeqLayout, Tensor, Var};
use crate::text::{TokenizedExample, PAD_ID};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
/// Output classes of the classifier head.
pub const N_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            max_len: crate::text::DEFAULT_MAX_LEN,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
        }
    }
}

impl EncoderConfig {
    /// Zero layers is accepted: the encoder then reduces to the embedding
    /// lookup.
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of tensors in declaration order.
    pub fn tensor_count(&self) -> usize {
        2 + LAYER_TENSORS * self.n_layers + 2
    }

    /// Closed-form scalar parameter count.
    pub fn param_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        let embeddings = (self.vocab_size + self.max_len) * d;
        let per_layer = 2 * 2 * d // two layer norms
            + 4 * (d * d + d)      // q, k, v, o projections
            + (d * f + f)          // ff in
            + (f * d + d); // ff out
        let classifier = d * N_CLASSES + N_CLASSES;
        embeddings + self.n_layers * per_layer + classifier
    }

    /// Shapes of every tensor in declaration order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let (d, f) = (self.d_model, self.d_ff);
        let mut shapes = Vec::with_capacity(self.tensor_count());
        shapes.push((self.vocab_size, d));
        shapes.push((self.max_len, d));
        for _ in 0..self.n_layers {
            for slot in LayerSlot::ALL {
                shapes.push(slot.shape(d, f));
            }
        }
        shapes.push((d, N_CLASSES));
        shapes.push((1, N_CLASSES));
        shapes
    }
}

/// Position of a tensor within one encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSlot {
    Ln1Gain,
    Ln1Bias,
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln2Gain,
    Ln2Bias,
    Wff1,
    Bff1,
    Wff2,
    Bff2,
}

const LAYER_TENSORS: usize = 16;

impl LayerSlot {
    pub const ALL: [LayerSlot; LAYER_TENSORS] = [
        LayerSlot::Ln1Gain,
        LayerSlot::Ln1Bias,
        LayerSlot::Wq,
        LayerSlot::Bq,
        LayerSlot::Wk,
        LayerSlot::Bk,
        LayerSlot::Wv,
        LayerSlot::Bv,
        LayerSlot::Wo,
        LayerSlot::Bo,
        LayerSlot::Ln2Gain,
        LayerSlot::Ln2Bias,
        LayerSlot::Wff1,
        LayerSlot::Bff1,
        LayerSlot::Wff2,
        LayerSlot::Bff2,
    ];

    fn shape(self, d: usize, f: usize) -> (usize, usize) {
        use LayerSlot::*;
        match self {
            Ln1Gain | Ln1Bias | Ln2Gain | Ln2Bias | Bq | Bk | Bv | Bo | Bff2 => (1, d),
            Wq | Wk | Wv | Wo => (d, d),
            Wff1 => (d, f),
            Bff1 => (1, f),
            Wff2 => (f, d),
        }
    }

    fn init(self) -> Init {
        use LayerSlot::*;
        match self {
            Ln1Gain | Ln2Gain => Init::Ones,
            Ln1Bias | Ln2Bias | Bq | Bk | Bv | Bo | Bff1 | Bff2 => Init::Zeros,
            Wq | Wk | Wv | Wo | Wff1 | Wff2 => Init::Normal,
        }
    }
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Index helpers shared by [`EncoderParams`] and bound graph variables.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    n_layers: usize,
}

impl Layout {
    pub const TOKEN_EMBEDDING: usize = 0;
    pub const POSITION_EMBEDDING: usize = 1;

    pub fn layer(&self, layer: usize, slot: LayerSlot) -> usize {
        2 + layer * LAYER_TENSORS + slot as usize
    }

    pub fn classifier_weight(&self) -> usize {
        2 + self.n_layers * LAYER_TENSORS
    }

    pub fn classifier_bias(&self) -> usize {
        self.classifier_weight() + 1
    }
}

/// Every trainable tensor of the encoder and classifier, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    tensors: Vec<Tensor>,
}

impl EncoderParams {
    /// Normal(0, 0.02) weights and embeddings, zero biases, unit layer-norm
    /// gains; fully determined by `seed`.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<EncoderParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut inits = Vec::with_capacity(config.tensor_count());
        inits.push(Init::Normal);
        inits.push(Init::Normal);
        for _ in 0..config.n_layers {
            inits.extend(LayerSlot::ALL.iter().map(|s| s.init()));
        }
        inits.push(Init::Normal);
        inits.push(Init::Zeros);
        let tensors = config
            .shapes()
            .into_iter()
            .zip(inits)
            .map(|((r, c), init)| match init {
                Init::Zeros => Tensor::zeros(r, c),
                Init::Ones => Tensor::filled(r, c, 1.0),
                Init::Normal => {
                    let data = (0..r * c).map(|_| normal.sample(&mut rng)).collect();
                    Tensor::from_vec(r, c, data).expect("shape from config")
                }
            })
            .collect();
        Ok(EncoderParams { config, tensors })
    }

    /// Wraps tensors read back from storage, checking them against `config`.
    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor>) -> Result<EncoderParams> {
        config.validate()?;
        let shapes = config.shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Data(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (i, (shape, t)) in shapes.iter().zip(&tensors).enumerate() {
            if *shape != t.shape() {
                return Err(Error::Dimension {
                    op: "load tensor",
                    lhs: *shape,
                    rhs: t.shape(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter tensor {i}")));
            }
        }
        Ok(EncoderParams { config, tensors })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        Layout {
            n_layers: self.config.n_layers,
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Records every tensor on `g` as a constant (inference only).
    pub fn bind_constants(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }
}

/// A batch flattened to `[batch * len]` positions, trimmed to the longest
/// real sequence it contains.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub key_mask: Vec<bool>,
    pub layout: SeqLayout,
}

impl Batch {
    pub fn new(examples: &[&TokenizedExample]) -> Result<Batch> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Input("empty batch".into()))?;
        let padded = first.ids.len();
        if let Some(bad) = examples.iter().find(|e| e.ids.len() != padded) {
            return Err(Error::Input(format!(
                "mixed padded lengths in batch: {padded} and {}",
                bad.ids.len()
            )));
        }
        let len = examples
            .iter()
            .map(|e| e.attn_mask.iter().filter(|&&m| m == 1).count())
            .max()
            .unwrap_or(1)
            .max(1);
        let mut ids = Vec::with_capacity(examples.len() * len);
        let mut key_mask = Vec::with_capacity(examples.len() * len);
        for e in examples {
            for j in 0..len {
                ids.push(e.ids.get(j).copied().unwrap_or(PAD_ID));
                key_mask.push(e.attn_mask.get(j) == Some(&1));
            }
        }
        Ok(Batch {
            ids,
            key_mask,
            layout: SeqLayout {
                batch: examples.len(),
                len,
            },
        })
    }

    /// Flat row of position `pos` in sequence `b`.
    pub fn row(&self, b: usize, pos: usize) -> usize {
        b * self.layout.len + pos
    }
}

/// Graph nodes produced by one encoder pass.
pub struct EncoderOutput {
    /// `[batch * len x d_model]` final-layer embeddings.
    pub hidden: Var,
    /// Attention node of each layer, for inspecting weights.
    pub attention: Vec<Var>,
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Multi-head self-attention sublayer: projections, masked attention, output
/// projection. `x` is the (already normalised) `[batch * len x d]` input.
pub fn multi_head_self_attention(
    g: &mut Graph,
    vars: &[Var],
    layout: Layout,
    layer: usize,
    config: &EncoderConfig,
    x: Var,
    batch: &Batch,
) -> Result<(Var, Var)> {
    let p = |slot| vars[layout.layer(layer, slot)];
    let q = linear(g, x, p(LayerSlot::Wq), p(LayerSlot::Bq))?;
    let k = linear(g, x, p(LayerSlot::Wk), p(LayerSlot::Bk))?;
    let v = linear(g, x, p(LayerSlot::Wv), p(LayerSlot::Bv))?;
    let att = g.attention(q, k, v, batch.layout, config.n_heads, &batch.key_mask)?;
    let out = linear(g, att, p(LayerSlot::Wo), p(LayerSlot::Bo))?;
    Ok((out, att))
}

/// Runs the encoder stack over `batch`.
///
/// Each layer is `x + MHSA(LN(x))` followed by `x + FFN(LN(x))` with a ReLU
/// feed-forward. Padded rows are computed but never attended to.
pub fn encode_batch(
    g: &mut Graph,
    vars: &[Var],
    config: &EncoderConfig,
    batch: &Batch,
) -> Result<EncoderOutput> {
    let layout = Layout {
        n_layers: config.n_layers,
    };
    if vars.len() != config.tensor_count() {
        return Err(Error::Input(format!(
            "expected {} parameter nodes, got {}",
            config.tensor_count(),
            vars.len()
        )));
    }
    if batch.layout.len > config.max_len {
        return Err(Error::Input(format!(
            "sequence length {} exceeds max_len {}",
            batch.layout.len, config.max_len
        )));
    }
    if let Some(&bad) = batch.ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::Input(format!(
            "token id {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    let positions: Vec<usize> = (0..batch.layout.batch)
        .flat_map(|_| 0..batch.layout.len)
        .collect();
    let tok = g.gather_rows(vars[Layout::TOKEN_EMBEDDING], &batch.ids)?;
    let pos = g.gather_rows(vars[Layout::POSITION_EMBEDDING], &positions)?;
    let mut x = g.add(tok, pos)?;
    let mut attention = Vec::with_capacity(config.n_layers);
    for layer in 0..config.n_layers {
        let p = |slot| vars[layout.layer(layer, slot)];
        let a = g.layer_norm(x, p(LayerSlot::Ln1Gain), p(LayerSlot::Ln1Bias), LAYER_NORM_EPS)?;
        let (att_out, att) = multi_head_self_attention(g, vars, layout, layer, config, a, batch)?;
        attention.push(att);
        x = g.add(x, att_out)?;
        let f = g.layer_norm(x, p(LayerSlot::Ln2Gain), p(LayerSlot::Ln2Bias), LAYER_NORM_EPS)?;
        let hidden = linear(g, f, p(LayerSlot::Wff1), p(LayerSlot::Bff1))?;
        let hidden = g.relu(hidden);
        let ff = linear(g, hidden, p(LayerSlot::Wff2), p(LayerSlot::Bff2))?;
        x = g.add(x, ff)?;
    }
    Ok(EncoderOutput {
        hidden: x,
        attention,
    })
}

/// Final-layer embeddings of a single example, `[(n + 1) x d]` over `[CLS]`
/// and its real tokens.
pub fn hidden_states(params: &EncoderParams, example: &TokenizedExample) -> Result<Tensor> {
    let batch = Batch::new(&[example])?;
    let mut g = Graph::new();
    let vars = params.bind_constants(&mut g);
    let out = encode_batch(&mut g, &vars, params.config(), &batch)?;
    let rows: Vec<usize> = (0..example.real_len()).collect();
    Ok(g.value(out.hidden).select_rows(&rows))
}
