//! Versioned binary parameter checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic "HLENSCKP" | version u32
//! vocab_size max_len d_model n_heads n_layers d_ff   (u64 each)
//! target mode u8 | value source u8 | lambda f64
//! tensor count u64, then per tensor: rows u64, cols u64, rows*cols f64
//! ```
//!
//! Tensors appear in parameter declaration order.

use std::fs;
use std::path::Path;

use hatelens_core::encoder::{EncoderConfig, EncoderParams};
use hatelens_core::model::Model;
use hatelens_core::numerics::Tensor;
use hatelens_core::relation::ValueSource;
use hatelens_core::training::TargetMode;

use crate::formats::write_output;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"HLENSCKP";
pub const VERSION: u32 = 1;

/// A trained model together with the head settings it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub target_mode: TargetMode,
    pub value_source: ValueSource,
    pub lambda: f64,
    pub params: EncoderParams,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Ok(Model::new(
            self.params.clone(),
            self.target_mode.head(self.lambda, self.value_source),
        )?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.params.config();
        let mut out = Vec::with_capacity(64 + 8 * cfg.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [cfg.vocab_size, cfg.max_len, cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.d_ff] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        let mode = TargetMode::ALL.iter().position(|m| *m == self.target_mode).expect("known mode");
        out.push(mode as u8);
        out.push(match self.value_source {
            ValueSource::Targets => 0,
            ValueSource::Cls => 1,
        });
        out.extend_from_slice(&self.lambda.to_le_bytes());
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.usize()?;
        }
        let config = EncoderConfig {
            vocab_size: dims[0],
            max_len: dims[1],
            d_model: dims[2],
            n_heads: dims[3],
            n_layers: dims[4],
            d_ff: dims[5],
        };
        config.validate()?;
        let mode = r.take(1)?[0];
        let target_mode = *TargetMode::ALL
            .get(usize::from(mode))
            .ok_or_else(|| Error::Format(format!("unknown target mode code {mode}")))?;
        let value_source = match r.take(1)?[0] {
            0 => ValueSource::Targets,
            1 => ValueSource::Cls,
            other => return Err(Error::Format(format!("unknown value source code {other}"))),
        };
        let lambda = r.f64()?;
        let count = r.usize()?;
        if count != config.tensor_count() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, configuration needs {}",
                config.tensor_count()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = r.usize()?;
            let cols = r.usize()?;
            let len = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Format(format!("implausible tensor shape {rows}x{cols}")))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::from_vec(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after tensors", bytes.len() - r.pos)));
        }
        let params = EncoderParams::from_tensors(config, tensors)?;
        let ckpt = Checkpoint {
            target_mode,
            value_source,
            lambda,
            params,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_output(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in memory")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Names the first encoder setting on which two configurations differ.
pub fn config_mismatch(a: &EncoderConfig, b: &EncoderConfig) -> Option<String> {
    let fields = [
        ("vocab_size", a.vocab_size, b.vocab_size),
        ("max_len", a.max_len, b.max_len),
        ("d_model", a.d_model, b.d_model),
        ("n_heads", a.n_heads, b.n_heads),
        ("n_layers", a.n_layers, b.n_layers),
        ("d_ff", a.d_ff, b.d_ff),
    ];
    fields
        .into_iter()
        .find(|(_, x, y)| x != y)
        .map(|(name, x, y)| format!("{name} differs: {x} vs {y}"))
}
