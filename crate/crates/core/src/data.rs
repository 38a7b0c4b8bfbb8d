//! Corpus records, stratified splits, combined-corpus mode and the seeded
//! synthetic corpus.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::target::{EntityClass, GazetteerLexicon};
use crate::{Error, Result};

/// Character span `[start, end)` of a known target in the record text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSpan {
    pub start: usize,
    pub end: usize,
    pub class: EntityClass,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub label: u8,
    pub dataset: String,
    pub target_spans: Option<Vec<TargetSpan>>,
}

impl CorpusRecord {
    pub fn spans(&self) -> Vec<(usize, usize, EntityClass)> {
        self.target_spans
            .iter()
            .flatten()
            .map(|s| (s.start, s.end, s.class))
            .collect()
    }
}

/// Checks label values and id uniqueness.
pub fn validate_corpus(records: &[CorpusRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if r.label > 1 {
            return Err(Error::Data(format!(
                "record {} has non-binary label {}",
                r.id, r.label
            )));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Data(format!("duplicate record id {}", r.id)));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<CorpusRecord>,
    pub valid: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }

    /// Fails unless the three splits are non-empty and share no id.
    pub fn check(&self) -> Result<()> {
        for (name, split) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            if split.is_empty() {
                return Err(Error::Config(format!("{name} split is empty")));
            }
        }
        let mut seen = BTreeSet::new();
        for r in self.train.iter().chain(&self.valid).chain(&self.test) {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Data(format!("record {} appears in two splits", r.id)));
            }
        }
        Ok(())
    }

    /// Test records grouped by source dataset.
    pub fn test_by_dataset(&self) -> BTreeMap<&str, Vec<&CorpusRecord>> {
        let mut out: BTreeMap<&str, Vec<&CorpusRecord>> = BTreeMap::new();
        for r in &self.test {
            out.entry(r.dataset.as_str()).or_default().push(r);
        }
        out
    }
}

/// Seeded shuffle and contiguous cut, stratified by dataset and label.
///
/// Each `(dataset, label)` group is shuffled and cut independently, with
/// the train and valid shares rounded to the nearest record and the
/// remainder going to test.
pub fn make_splits(records: &[CorpusRecord], fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    validate_corpus(records)?;
    let mut groups: BTreeMap<(&str, u8), Vec<&CorpusRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.dataset.as_str(), r.label)).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit::default();
    for (_, mut group) in groups {
        group.shuffle(&mut rng);
        let n = group.len() as f64;
        let n_train = libm::round(n * fractions[0]) as usize;
        let n_valid = (libm::round(n * fractions[1]) as usize).min(group.len() - n_train);
        split.train.extend(group[..n_train].iter().map(|r| (*r).clone()));
        split.valid.extend(group[n_train..n_train + n_valid].iter().map(|r| (*r).clone()));
        split.test.extend(group[n_train + n_valid..].iter().map(|r| (*r).clone()));
    }
    // interleave strata again so batches are not label-sorted
    split.train.shuffle(&mut rng);
    split.valid.shuffle(&mut rng);
    split.test.shuffle(&mut rng);
    split.check()?;
    Ok(split)
}

/// Concatenates corpora, prefixing every id with `dataset/` so ids from
/// different sources cannot collide.
pub fn combine(corpora: &[Vec<CorpusRecord>]) -> Vec<CorpusRecord> {
    corpora
        .iter()
        .flatten()
        .map(|r| CorpusRecord {
            id: format!("{}/{}", r.dataset, r.id),
            ..r.clone()
        })
        .collect()
}

/// Per-corpus splits joined split-wise, keeping every dataset's test
/// records intact for separate evaluation.
pub fn combine_splits(splits: &[DatasetSplit]) -> Result<DatasetSplit> {
    let prefix = |rs: &[CorpusRecord]| -> Vec<CorpusRecord> {
        rs.iter()
            .map(|r| CorpusRecord {
                id: format!("{}/{}", r.dataset, r.id),
                ..r.clone()
            })
            .collect()
    };
    let mut out = DatasetSplit::default();
    for s in splits {
        out.train.extend(prefix(&s.train));
        out.valid.extend(prefix(&s.valid));
        out.test.extend(prefix(&s.test));
    }
    out.check()?;
    Ok(out)
}

/// Entity lexicon used by the synthetic corpus and as the default tagger.
pub fn default_lexicon() -> GazetteerLexicon {
    use EntityClass::*;
    const ENTRIES: &[(&str, EntityClass)] = &[
        ("german", Norp),
        ("french", Norp),
        ("irish", Norp),
        ("italian", Norp),
        ("polish", Norp),
        ("dutch", Norp),
        ("mexican", Norp),
        ("catholic", Norp),
        ("new york", Gpe),
        ("texas", Gpe),
        ("paris", Gpe),
        ("berlin", Gpe),
        ("ohio", Gpe),
        ("new south wales", Gpe),
        ("alps", Loc),
        ("sahara", Loc),
        ("gulf coast", Loc),
        ("north sea", Loc),
        ("red cross", Org),
        ("united nations", Org),
        ("nasa", Org),
        ("city council", Org),
        ("world cup", Event),
        ("olympics", Event),
        ("super bowl", Event),
        ("great war", Event),
    ];
    let mut lex = GazetteerLexicon::new();
    for (phrase, class) in ENTRIES {
        lex.insert(phrase, *class).expect("static lexicon");
    }
    lex
}

const HOSTILE: &[&str] = &[
    "disgusting", "filthy", "worthless", "vile", "rotten", "toxic", "pathetic", "awful",
];
const NEUTRAL: &[&str] = &[
    "lovely", "friendly", "great", "fine", "decent", "cheerful", "wonderful", "okay",
];
const ADVERBS: &[&str] = &["", "", "really", "honestly", "so", "truly", "pretty"];
const OPENERS: &[&str] = &["", "", "i think", "honestly ,", "lol", "well ,", "you know ,", "tbh"];
const JOINERS: &[&str] = &["and", "but", "while", ",", "; also", "and yet"];
const OTHER_SUBJECTS: &[&str] = &[
    "the weather is",
    "the traffic is",
    "my coffee is",
    "the movie was",
    "this song is",
    "the food is",
    "the new phone is",
    "the bus ride was",
];

/// Clause frames that read naturally for a given entity class; `{}` is the
/// entity phrase.
fn entity_frames(class: EntityClass) -> &'static [(&'static str, &'static str)] {
    use EntityClass::*;
    match class {
        Norp => &[("the", "men are"), ("", "people are"), ("those", "folks are"), ("the", "neighbors are")],
        Gpe | Loc => &[("folks from", "are"), ("everyone in", "is"), ("people near", "are")],
        Org => &[("the", "staff are"), ("people at", "are"), ("the", "volunteers are")],
        Event => &[("fans of the", "are"), ("everyone at the", "is"), ("the", "crowds are")],
    }
}

struct SentenceBuilder {
    text: String,
    spans: Vec<TargetSpan>,
    chars: usize,
}

impl SentenceBuilder {
    fn new() -> Self {
        SentenceBuilder {
            text: String::new(),
            spans: Vec::new(),
            chars: 0,
        }
    }

    fn push(&mut self, words: &str) {
        for w in words.split_whitespace() {
            if !self.text.is_empty() {
                self.text.push(' ');
                self.chars += 1;
            }
            self.text.push_str(w);
            self.chars += w.chars().count();
        }
    }

    fn push_entity(&mut self, phrase: &str, class: EntityClass) {
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        let start = self.chars;
        self.text.push_str(phrase);
        self.chars += phrase.chars().count();
        self.spans.push(TargetSpan {
            start,
            end: self.chars,
            class,
        });
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).copied().unwrap_or("")
}

fn entity_clause<R: Rng>(
    b: &mut SentenceBuilder,
    rng: &mut R,
    entities: &[(String, EntityClass)],
    hostile: bool,
) {
    let (phrase, class) = entities.choose(rng).expect("non-empty lexicon");
    let (before, after) = *entity_frames(*class).choose(rng).expect("frames");
    b.push(before);
    b.push_entity(phrase, *class);
    b.push(after);
    b.push(pick(rng, ADVERBS));
    b.push(pick(rng, if hostile { HOSTILE } else { NEUTRAL }));
}

fn other_clause<R: Rng>(b: &mut SentenceBuilder, rng: &mut R, hostile: bool) {
    b.push(pick(rng, OTHER_SUBJECTS));
    b.push(pick(rng, ADVERBS));
    b.push(pick(rng, if hostile { HOSTILE } else { NEUTRAL }));
}

/// Share of synthetic sentences with a single, entity-bound clause.
const SINGLE_CLAUSE_RATE: f64 = 0.3;

/// Seeded synthetic corpus of `size` records with exactly balanced labels.
///
/// Every sentence names a lexicon entity. A hateful sentence attaches a
/// hostile predicate to the entity; a non-hateful one attaches a neutral
/// predicate. Two-clause sentences also describe an unrelated subject with
/// the opposite polarity, so both classes contain the same vocabulary and
/// only the binding between entity and predicate separates them.
pub fn gen_synthetic(size: usize, seed: u64, lexicon: &GazetteerLexicon) -> Result<Vec<CorpusRecord>> {
    let entities: Vec<(String, EntityClass)> = lexicon.entries().collect();
    if entities.is_empty() {
        return Err(Error::Input("synthetic corpus needs a non-empty lexicon".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..size).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng);
    let width = size.to_string().len().max(5);
    let records = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let hateful = label == 1;
            let mut b = SentenceBuilder::new();
            b.push(pick(&mut rng, OPENERS));
            if rng.random_bool(SINGLE_CLAUSE_RATE) {
                entity_clause(&mut b, &mut rng, &entities, hateful);
            } else if rng.random_bool(0.5) {
                entity_clause(&mut b, &mut rng, &entities, hateful);
                b.push(pick(&mut rng, JOINERS));
                other_clause(&mut b, &mut rng, !hateful);
            } else {
                other_clause(&mut b, &mut rng, !hateful);
                b.push(pick(&mut rng, JOINERS));
                entity_clause(&mut b, &mut rng, &entities, hateful);
            }
            b.push(".");
            CorpusRecord {
                id: format!("syn-{i:0width$}"),
                text: b.text,
                label,
                dataset: "synthetic".to_string(),
                target_spans: Some(b.spans),
            }
        })
        .collect();
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::TargetMask;
    use crate::text::tokenize;

    fn record(id: &str, label: u8, dataset: &str) -> CorpusRecord {
        CorpusRecord {
            id: id.into(),
            text: format!("text {id}"),
            label,
            dataset: dataset.into(),
            target_spans: None,
        }
    }

    #[test]
    fn validation_errors_name_the_record() {
        let dup = [record("a", 0, "d"), record("a", 1, "d")];
        assert!(matches!(validate_corpus(&dup), Err(Error::Data(m)) if m.contains('a')));
        let bad = [record("x", 2, "d")];
        assert!(validate_corpus(&bad).is_err());
    }

    #[test]
    fn splits_are_sized_and_seeded() {
        let recs: Vec<_> = (0..100).map(|i| record(&format!("r{i}"), (i % 2) as u8, "d")).collect();
        let s = make_splits(&recs, [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(s.sizes(), (80, 10, 10));
        assert_eq!(s, make_splits(&recs, [0.8, 0.1, 0.1], 9).unwrap());
        assert_ne!(s, make_splits(&recs, [0.8, 0.1, 0.1], 10).unwrap());
        assert!(make_splits(&recs, [0.8, 0.1, 0.2], 9).is_err());
        assert!(make_splits(&recs[..3], [0.8, 0.1, 0.1], 9).is_err());
    }

    #[test]
    fn stratified_ratio_within_one_example() {
        // 37% positives: each split's positive count stays within one record
        // of its proportional share
        let recs: Vec<_> = (0..200)
            .map(|i| record(&format!("r{i}"), u8::from(i % 100 < 37), "d"))
            .collect();
        let s = make_splits(&recs, [0.7, 0.15, 0.15], 3).unwrap();
        for part in [&s.train, &s.valid, &s.test] {
            let pos = part.iter().filter(|r| r.label == 1).count() as f64;
            let expect = part.len() as f64 * 0.37;
            assert!((pos - expect).abs() <= 1.0, "{pos} vs {expect}");
        }
    }

    #[test]
    fn combine_prefixes_ids() {
        let a: Vec<_> = (0..5).map(|i| record(&format!("{i}"), 0, "ihc")).collect();
        let b: Vec<_> = (0..7).map(|i| record(&format!("{i}"), 1, "sbic")).collect();
        let all = combine(&[a, b]);
        assert_eq!(all.len(), 12);
        validate_corpus(&all).unwrap();
        assert_eq!(all[0].id, "ihc/0");
    }

    #[test]
    fn combined_splits_keep_per_dataset_sizes() {
        let a: Vec<_> = (0..40).map(|i| record(&format!("{i}"), (i % 2) as u8, "ihc")).collect();
        let b: Vec<_> = (0..60).map(|i| record(&format!("{i}"), (i % 2) as u8, "sbic")).collect();
        let sa = make_splits(&a, [0.8, 0.1, 0.1], 1).unwrap();
        let sb = make_splits(&b, [0.8, 0.1, 0.1], 1).unwrap();
        let c = combine_splits(&[sa.clone(), sb.clone()]).unwrap();
        assert_eq!(c.train.len(), sa.train.len() + sb.train.len());
        assert_eq!(c.valid.len(), sa.valid.len() + sb.valid.len());
        assert_eq!(c.test.len(), sa.test.len() + sb.test.len());
        let per = c.test_by_dataset();
        assert_eq!(per["ihc"].len(), sa.test.len());
        assert_eq!(per["sbic"].len(), sb.test.len());
    }

    #[test]
    fn synthetic_corpus_contract() {
        let lex = default_lexicon();
        let recs = gen_synthetic(200, 7, &lex).unwrap();
        assert_eq!(recs.len(), 200);
        let pos = recs.iter().filter(|r| r.label == 1).count();
        assert!((90..=110).contains(&pos));
        assert_eq!(recs, gen_synthetic(200, 7, &lex).unwrap());
        validate_corpus(&recs).unwrap();
        assert!(gen_synthetic(5, 1, &GazetteerLexicon::new()).is_err());
    }

    #[test]
    fn synthetic_entities_are_fully_taggable() {
        let lex = default_lexicon();
        for r in gen_synthetic(300, 11, &lex).unwrap() {
            let toks = tokenize(&r.text);
            let tagged = lex.tag(&toks);
            let from_spans = TargetMask::from_char_spans(&toks, &r.spans());
            assert!(tagged.count() > 0, "{}", r.text);
            assert_eq!(tagged, from_spans, "{}", r.text);
        }
    }
}
