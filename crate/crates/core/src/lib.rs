//! Target-aware relation injection for implicit hate speech classification.
//!
//! A small Transformer encoder produces contextual token embeddings. Explicit
//! targets (entity mentions found by a gazetteer, a random baseline, or an
//! external tagger) and the implicit `[CLS]` target are related to the
//! sentence representation through scaled dot-product attention, and the
//! resulting relation vector is added onto the `[CLS]` embedding right before
//! the classifier.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the command line
//! and anything touching the operating system live in the companion `hatelens`
//! crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod data;
pub mod encoder;
mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod relation;
pub mod target;
pub mod text;
pub mod training;

pub use error::{Error, Result};
