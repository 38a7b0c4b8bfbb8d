//! Whitespace-and-punctuation tokenizer, vocabulary and `[CLS]`-prefixed
//! encoding.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
/// Number of reserved ids preceding the learned vocabulary.
pub const RESERVED: usize = 3;
pub const DEFAULT_MAX_LEN: usize = 64;

/// A lowercased token and its `[start, end)` character span in the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: (usize, usize),
}

/// Lowercases, splits on Unicode whitespace and detaches every
/// non-alphanumeric character as its own token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            tokens.push(Token {
                text: core::mem::take(current),
                span: (start, end),
            });
        }
    };
    let mut pos = 0;
    for (i, c) in text.chars().enumerate() {
        pos = i + 1;
        if c.is_whitespace() {
            flush(&mut current, start, i, &mut tokens);
        } else if c.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.extend(c.to_lowercase());
        } else {
            flush(&mut current, start, i, &mut tokens);
            let mut punct = String::new();
            punct.extend(c.to_lowercase());
            tokens.push(Token {
                text: punct,
                span: (i, i + 1),
            });
        }
    }
    flush(&mut current, start, pos, &mut tokens);
    tokens
}

/// Token-to-id mapping with `[PAD]`=0, `[CLS]`=1, `[UNK]`=2 reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Counts tokens over `corpus` and keeps those seen at least `min_freq`
    /// times. Ids are assigned by descending count, then lexicographically.
    pub fn build<I, S>(corpus: I, min_freq: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut sentences = 0usize;
        for sentence in corpus {
            sentences += 1;
            for tok in tokenize(sentence.as_ref()) {
                *counts.entry(tok.text).or_default() += 1;
            }
        }
        if sentences == 0 {
            return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Vocab::from_tokens(kept.into_iter().map(|(t, _)| t)))
    }

    /// Vocabulary with ids `RESERVED..` assigned in iteration order.
    /// Duplicates keep their first id.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Vocab {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: BTreeMap::new(),
        };
        for t in tokens {
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len() + RESERVED);
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    /// Total id count including the reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        match id {
            PAD_ID => "[PAD]",
            CLS_ID => "[CLS]",
            UNK_ID => "[UNK]",
            _ => self.tokens.get(id - RESERVED).map_or("[UNK]", String::as_str),
        }
    }

    /// Learned tokens in id order (excluding reserved ids).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// One sentence ready for the encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedExample {
    /// `ids[0]` is `[CLS]`; padded with `[PAD]` to `max_len`.
    pub ids: Vec<usize>,
    /// 1 for `[CLS]` and real tokens, 0 for padding.
    pub attn_mask: Vec<u8>,
    pub label: u8,
    /// Character spans of the kept (non-special) tokens.
    pub offsets: Vec<(usize, usize)>,
}

impl TokenizedExample {
    /// Number of real tokens after `[CLS]`.
    pub fn n_tokens(&self) -> usize {
        self.offsets.len()
    }

    /// Positions holding `[CLS]` or a real token.
    pub fn real_len(&self) -> usize {
        self.n_tokens() + 1
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = label;
        self
    }
}

/// Prepends `[CLS]`, truncates to `max_len` and pads with `[PAD]`.
pub fn encode(tokens: &[Token], vocab: &Vocab, max_len: usize) -> Result<TokenizedExample> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len must be at least 2, got {max_len}")));
    }
    let kept = tokens.len().min(max_len - 1);
    let mut ids = Vec::with_capacity(max_len);
    let mut attn_mask = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    attn_mask.push(1);
    for tok in &tokens[..kept] {
        ids.push(vocab.id(&tok.text));
        attn_mask.push(1);
    }
    ids.resize(max_len, PAD_ID);
    attn_mask.resize(max_len, 0);
    Ok(TokenizedExample {
        ids,
        attn_mask,
        label: 0,
        offsets: tokens[..kept].iter().map(|t| t.span).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn tokenize_detaches_punctuation_with_spans() {
        let toks = tokenize("Arrest them!");
        assert_eq!(texts(&toks), ["arrest", "them", "!"]);
        let spans: Vec<_> = toks.iter().map(|t| t.span).collect();
        assert_eq!(spans, [(0, 6), (7, 11), (11, 12)]);
    }

    #[test]
    fn tokenize_edge_cases() {
        assert!(tokenize("").is_empty());
        assert_eq!(texts(&tokenize("  a  ")), ["a"]);
        assert_eq!(tokenize("  a  ")[0].span, (2, 3));
        assert_eq!(texts(&tokenize("Don't\tstop")), ["don", "'", "t", "stop"]);
        // spans count characters, not bytes
        assert_eq!(tokenize("é b")[1].span, (2, 3));
    }

    #[test]
    fn build_vocab_respects_min_freq() {
        let v = Vocab::build(["a b", "a"], 1).unwrap();
        assert_eq!(v.tokens(), ["a", "b"]);
        assert_eq!(v.len(), 5);
        let v2 = Vocab::build(["a b", "a"], 2).unwrap();
        assert_eq!(v2.tokens(), ["a"]);
        assert_eq!(v2.id("b"), UNK_ID);
        let v3 = Vocab::build(["", "x"], 1).unwrap();
        assert_eq!(v3.tokens(), ["x"]);
        assert!(Vocab::build(Vec::<&str>::new(), 1).is_err());
    }

    #[test]
    fn reserved_ids_never_reassigned() {
        let v = Vocab::build(["[pad] [cls] x"], 1).unwrap();
        assert!(v.tokens().iter().all(|t| v.id(t) >= RESERVED));
        assert_eq!(v.token(CLS_ID), "[CLS]");
    }

    #[test]
    fn encode_pads_and_truncates() {
        let v = Vocab::build(["a"], 1).unwrap();
        let e = encode(&tokenize("a"), &v, 4).unwrap();
        assert_eq!(e.ids, vec![CLS_ID, v.id("a"), PAD_ID, PAD_ID]);
        assert_eq!(e.attn_mask, vec![1, 1, 0, 0]);

        let long = tokenize("a a a a a a a a a a");
        let e = encode(&long, &v, 4).unwrap();
        assert_eq!(e.n_tokens(), 3);
        assert_eq!(e.attn_mask, vec![1, 1, 1, 1]);

        let e = encode(&tokenize("zzz"), &v, 4).unwrap();
        assert_eq!(e.ids[1], UNK_ID);

        assert!(matches!(encode(&long, &v, 1), Err(Error::Config(_))));
    }
}
