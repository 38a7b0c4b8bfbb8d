//! Explicit target identification: which token positions name an entity.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::text::Token;
use crate::{Error, Result};

/// Entity classes retained as explicit targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityClass {
    /// Organizations.
    Org,
    /// Nationalities, religious and political groups.
    Norp,
    /// Countries, cities, states.
    Gpe,
    /// Non-GPE locations.
    Loc,
    /// Named events.
    Event,
}

impl EntityClass {
    pub const ALL: [EntityClass; 5] = [
        EntityClass::Org,
        EntityClass::Norp,
        EntityClass::Gpe,
        EntityClass::Loc,
        EntityClass::Event,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Org => "ORG",
            EntityClass::Norp => "NORP",
            EntityClass::Gpe => "GPE",
            EntityClass::Loc => "LOC",
            EntityClass::Event => "EVENT",
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown entity class {s:?}")))
    }
}

/// Binary mask over the real tokens after `[CLS]`; index `i` is token
/// position `i + 1` in the encoder output.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TargetMask {
    flags: Vec<bool>,
    classes: Vec<Option<EntityClass>>,
}

impl TargetMask {
    pub fn empty(n_tokens: usize) -> TargetMask {
        TargetMask {
            flags: vec![false; n_tokens],
            classes: vec![None; n_tokens],
        }
    }

    /// Mask flagging `indices`; `classes`, when given, pairs with `indices`.
    pub fn from_indices(
        n_tokens: usize,
        indices: &[usize],
        classes: Option<&[EntityClass]>,
    ) -> Result<TargetMask> {
        if let Some(cls) = classes {
            if cls.len() != indices.len() {
                return Err(Error::Data(format!(
                    "{} target indices but {} classes",
                    indices.len(),
                    cls.len()
                )));
            }
        }
        let mut mask = TargetMask::empty(n_tokens);
        for (k, &i) in indices.iter().enumerate() {
            if i >= n_tokens {
                return Err(Error::Data(format!(
                    "target index {i} outside {n_tokens} tokens"
                )));
            }
            mask.flags[i] = true;
            mask.classes[i] = classes.map(|c| c[k]);
        }
        Ok(mask)
    }

    pub fn from_flags(flags: Vec<bool>) -> TargetMask {
        let classes = vec![None; flags.len()];
        TargetMask { flags, classes }
    }

    /// Number of token positions covered (excludes `[CLS]`).
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn class(&self, i: usize) -> Option<EntityClass> {
        self.classes.get(i).copied().flatten()
    }

    /// Flagged token indices in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Drops positions beyond `n_tokens`, matching an encoder truncation.
    pub fn truncated(mut self, n_tokens: usize) -> TargetMask {
        self.flags.truncate(n_tokens);
        self.classes.truncate(n_tokens);
        self
    }

    /// Marks tokens whose character span lies inside one of `spans`.
    pub fn from_char_spans(tokens: &[Token], spans: &[(usize, usize, EntityClass)]) -> TargetMask {
        let mut mask = TargetMask::empty(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(&(_, _, class)) = spans
                .iter()
                .find(|(s, e, _)| *s <= tok.span.0 && tok.span.1 <= *e)
            {
                mask.flags[i] = true;
                mask.classes[i] = Some(class);
            }
        }
        mask
    }
}

pub const MAX_PHRASE_TOKENS: usize = 3;

/// Lowercased surface phrases of one to three tokens, each with a class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GazetteerLexicon {
    phrases: BTreeMap<Vec<String>, EntityClass>,
}

impl GazetteerLexicon {
    pub fn new() -> Self {
        GazetteerLexicon::default()
    }

    /// Adds a phrase, splitting it on whitespace after lowercasing. A phrase
    /// inserted twice keeps its latest class.
    pub fn insert(&mut self, phrase: &str, class: EntityClass) -> Result<()> {
        let key: Vec<String> = phrase
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .collect();
        if key.is_empty() || key.len() > MAX_PHRASE_TOKENS {
            return Err(Error::Input(format!(
                "lexicon phrase {phrase:?} must have 1 to {MAX_PHRASE_TOKENS} tokens"
            )));
        }
        self.phrases.insert(key, class);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// Phrases (space-joined) with their classes, in sorted order.
    pub fn entries(&self) -> impl Iterator<Item = (String, EntityClass)> + '_ {
        self.phrases.iter().map(|(k, &c)| (k.join(" "), c))
    }

    pub fn lookup(&self, phrase: &[&str]) -> Option<EntityClass> {
        let key: Vec<String> = phrase.iter().map(|s| s.to_string()).collect();
        self.phrases.get(&key).copied()
    }

    /// Greedy left-to-right longest match. Matches never overlap; every token
    /// of a matched phrase is flagged with the phrase's class.
    pub fn tag(&self, tokens: &[Token]) -> TargetMask {
        let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        let mut mask = TargetMask::empty(tokens.len());
        let mut i = 0;
        while i < words.len() {
            let longest = (1..=MAX_PHRASE_TOKENS.min(words.len() - i))
                .rev()
                .find_map(|n| self.lookup(&words[i..i + n]).map(|c| (n, c)));
            match longest {
                Some((n, class)) => {
                    for j in i..i + n {
                        mask.flags[j] = true;
                        mask.classes[j] = Some(class);
                    }
                    i += n;
                }
                None => i += 1,
            }
        }
        mask
    }
}

/// Flags each of `n_tokens` positions independently with probability `rate`.
pub fn random_mask<R: Rng + ?Sized>(n_tokens: usize, rate: f64, rng: &mut R) -> Result<TargetMask> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("random target rate {rate} outside [0, 1]")));
    }
    let flags = (0..n_tokens).map(|_| rng.random::<f64>() < rate).collect();
    Ok(TargetMask::from_flags(flags))
}

/// [`random_mask`] with its own generator seeded from `seed`.
pub fn random_mask_seeded(n_tokens: usize, rate: f64, seed: u64) -> Result<TargetMask> {
    random_mask(n_tokens, rate, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One externally supplied mask, e.g. from a neural tagger.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalMask {
    pub id: String,
    pub targets: Vec<usize>,
    pub classes: Option<Vec<EntityClass>>,
}

impl ExternalMask {
    pub fn from_mask(id: &str, mask: &TargetMask) -> ExternalMask {
        let targets = mask.indices();
        let classes: Option<Vec<EntityClass>> =
            targets.iter().map(|&i| mask.class(i)).collect();
        ExternalMask {
            id: id.to_string(),
            targets,
            classes,
        }
    }
}

/// Aligns external masks to examples given as `(id, token count)`.
///
/// Every example must have exactly one record and every target index must
/// fall inside its example.
pub fn align_external_masks(
    records: &[ExternalMask],
    examples: &[(&str, usize)],
) -> Result<Vec<TargetMask>> {
    let mut by_id: BTreeMap<&str, &ExternalMask> = BTreeMap::new();
    for r in records {
        if by_id.insert(r.id.as_str(), r).is_some() {
            return Err(Error::Data(format!("duplicate mask record for id {}", r.id)));
        }
    }
    let known: BTreeSet<&str> = examples.iter().map(|(id, _)| *id).collect();
    if let Some(extra) = by_id.keys().find(|id| !known.contains(*id)) {
        return Err(Error::Data(format!("mask record {extra} matches no example")));
    }
    examples
        .iter()
        .map(|&(id, n)| {
            let rec = by_id
                .get(id)
                .ok_or_else(|| Error::Data(format!("no mask record for example {id}")))?;
            TargetMask::from_indices(n, &rec.targets, rec.classes.as_deref())
                .map_err(|e| Error::Data(format!("example {id}: {e}")))
        })
        .collect()
}
