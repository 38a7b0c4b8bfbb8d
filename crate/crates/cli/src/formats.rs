//! Line-oriented text formats: corpora, split manifests, vocabularies,
//! lexicons and external target masks.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use hatelens_core::data::{CorpusRecord, DatasetSplit, TargetSpan};
use hatelens_core::target::{EntityClass, ExternalMask, GazetteerLexicon};
use hatelens_core::text::Vocab;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanLine {
    start: usize,
    end: usize,
    class: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    text: String,
    label: i64,
    dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_spans: Option<Vec<SpanLine>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskLine {
    id: String,
    targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<String>>,
}

/// Reads `path` and yields its non-blank lines with 1-based line numbers.
/// Every line must be valid UTF-8.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw)
            .map_err(|e| Error::parse(path, i + 1, format!("invalid UTF-8: {e}")))?;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if !line.trim().is_empty() {
            out.push((i + 1, line.to_string()));
        }
    }
    Ok(out)
}

/// Writes `contents`, creating parent directories. Failure to write an
/// output location is reported as a usage error: the path came from the
/// caller.
pub fn write_output(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Error::Usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Error::Usage(format!("cannot write {}: {e}", path.display())))
}

fn parse_class(path: &Path, line: usize, s: &str) -> Result<EntityClass> {
    s.parse().map_err(|e: hatelens_core::Error| Error::parse(path, line, e.to_string()))
}

/// Loads a line-delimited corpus. Malformed lines, labels other than 0/1
/// and duplicate ids are reported with their line number.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (n, line) in read_lines(path)? {
        let rec: RecordLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        let label = match rec.label {
            0 | 1 => rec.label as u8,
            other => return Err(Error::parse(path, n, format!("record {}: label {other} is not 0 or 1", rec.id))),
        };
        if !seen.insert(rec.id.clone()) {
            return Err(Error::parse(path, n, format!("duplicate id {}", rec.id)));
        }
        let target_spans = match rec.target_spans {
            None => None,
            Some(spans) => Some(
                spans
                    .into_iter()
                    .map(|s| {
                        if s.start >= s.end {
                            return Err(Error::parse(path, n, format!("empty span {}..{}", s.start, s.end)));
                        }
                        Ok(TargetSpan {
                            start: s.start,
                            end: s.end,
                            class: parse_class(path, n, &s.class)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        records.push(CorpusRecord {
            id: rec.id,
            text: rec.text,
            label,
            dataset: rec.dataset,
            target_spans,
        });
    }
    Ok(records)
}

pub fn corpus_to_string(records: &[CorpusRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            text: r.text.clone(),
            label: i64::from(r.label),
            dataset: r.dataset.clone(),
            target_spans: r.target_spans.as_ref().map(|spans| {
                spans
                    .iter()
                    .map(|s| SpanLine {
                        start: s.start,
                        end: s.end,
                        class: s.class.to_string(),
                    })
                    .collect()
            }),
        };
        out.push_str(&serde_json::to_string(&line).expect("corpus records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    write_output(path, corpus_to_string(records))
}

/// Record ids of each split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn of(split: &DatasetSplit) -> SplitManifest {
        let ids = |rs: &[CorpusRecord]| rs.iter().map(|r| r.id.clone()).collect();
        SplitManifest {
            train: ids(&split.train),
            valid: ids(&split.valid),
            test: ids(&split.test),
        }
    }

    /// Rebuilds the split from `records`; every listed id must exist.
    pub fn apply(&self, records: &[CorpusRecord]) -> Result<DatasetSplit> {
        let by_id: std::collections::BTreeMap<&str, &CorpusRecord> =
            records.iter().map(|r| (r.id.as_str(), r)).collect();
        let pick = |ids: &[String]| -> Result<Vec<CorpusRecord>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|r| (*r).clone())
                        .ok_or_else(|| Error::Format(format!("split manifest lists unknown id {id}")))
                })
                .collect()
        };
        let split = DatasetSplit {
            train: pick(&self.train)?,
            valid: pick(&self.valid)?,
            test: pick(&self.test)?,
        };
        split.check()?;
        Ok(split)
    }

    pub fn load(path: &Path) -> Result<SplitManifest> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_output(path, text)
    }
}

/// One token per line; line `k` (0-based) holds id `k + 3`.
pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut text = String::new();
    for t in vocab.tokens() {
        text.push_str(t);
        text.push('\n');
    }
    write_output(path, text)
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(path, 0, format!("invalid UTF-8: {e}")))?;
    let mut seen = BTreeSet::new();
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.chars().any(char::is_whitespace) {
            return Err(Error::parse(path, i + 1, format!("invalid vocabulary token {line:?}")));
        }
        if !seen.insert(line) {
            return Err(Error::parse(path, i + 1, format!("duplicate token {line:?}")));
        }
        tokens.push(line.to_string());
    }
    Ok(Vocab::from_tokens(tokens))
}

/// `phrase<TAB>CLASS` per line; blank lines and `#` comments are skipped.
pub fn load_lexicon(path: &Path) -> Result<GazetteerLexicon> {
    let mut lex = GazetteerLexicon::new();
    for (n, line) in read_lines(path)? {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let (phrase, class) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, n, "expected phrase<TAB>CLASS"))?;
        let class = parse_class(path, n, class.trim())?;
        lex.insert(phrase, class).map_err(|e| Error::parse(path, n, e.to_string()))?;
    }
    if lex.is_empty() {
        return Err(Error::Format(format!("{}: lexicon has no entries", path.display())));
    }
    Ok(lex)
}

pub fn lexicon_to_string(lex: &GazetteerLexicon) -> String {
    lex.entries().map(|(phrase, class)| format!("{phrase}\t{class}\n")).collect()
}

pub fn save_lexicon(path: &Path, lex: &GazetteerLexicon) -> Result<()> {
    write_output(path, lexicon_to_string(lex))
}

pub fn load_masks(path: &Path) -> Result<Vec<ExternalMask>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let m: MaskLine = serde_json::from_str(&line).map_err(|e| Error::parse(path, n, e.to_string()))?;
            let classes = match m.classes {
                None => None,
                Some(cs) => Some(cs.iter().map(|c| parse_class(path, n, c)).collect::<Result<Vec<_>>>()?),
            };
            Ok(ExternalMask {
                id: m.id,
                targets: m.targets,
                classes,
            })
        })
        .collect()
}

pub fn save_masks(path: &Path, masks: &[ExternalMask]) -> Result<()> {
    let mut out = String::new();
    for m in masks {
        let line = MaskLine {
            id: m.id.clone(),
            targets: m.targets.clone(),
            classes: m.classes.as_ref().map(|cs| cs.iter().map(|c| c.to_string()).collect()),
        };
        out.push_str(&serde_json::to_string(&line).expect("masks serialize"));
        out.push('\n');
    }
    write_output(path, out)
}
