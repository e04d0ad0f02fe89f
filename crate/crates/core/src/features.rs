//! Grounding-feature schema, one-hot encoding, vocabulary filtering, and the
//! feature matrix used as the reconstruction target.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One categorical feature and its admissible values, in encoding order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feature {
    pub name: &'static str,
    pub values: &'static [&'static str],
}

const FEATURES: [Feature; 8] = [
    Feature {
        name: "part_of_speech",
        values: &[
            "noun",
            "verb",
            "adjective",
            "adverb",
            "preposition",
            "conjunction",
            "interjection",
            "pronoun",
            "numeral",
            "article",
            "particle",
            "modal_verb",
            "auxiliary_verb",
            "determiner",
            "none",
        ],
    },
    Feature {
        name: "part_of_word",
        values: &[
            "prefix",
            "root",
            "suffix",
            "infix",
            "postfix",
            "circumfix",
            "none",
        ],
    },
    Feature {
        name: "person",
        values: &["first", "second", "third", "none"],
    },
    Feature {
        name: "connotation",
        values: &["positive", "neutral", "negative"],
    },
    Feature {
        name: "physical_object_or_action",
        values: &["true", "false"],
    },
    Feature {
        name: "usage_frequency",
        values: &["s", "m", "l", "xl"],
    },
    Feature {
        name: "has_many_meanings",
        values: &["true", "false"],
    },
    Feature {
        name: "can_be_used_meaningfully_on_its_own",
        values: &["true", "false"],
    },
];

/// The fixed eight-feature schema. Encodings concatenate one one-hot block
/// per feature in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeatureSchema;

impl FeatureSchema {
    pub fn features(&self) -> &'static [Feature] {
        &FEATURES
    }

    /// Total one-hot width (39).
    pub fn width(&self) -> usize {
        FEATURES.iter().map(|f| f.values.len()).sum()
    }

    /// Start offset of each feature's block.
    pub fn offsets(&self) -> Vec<usize> {
        FEATURES
            .iter()
            .scan(0, |acc, f| {
                let start = *acc;
                *acc += f.values.len();
                Some(start)
            })
            .collect()
    }

    pub fn feature(&self, name: &str) -> Option<(usize, &'static Feature)> {
        FEATURES.iter().enumerate().find(|(_, f)| f.name == name)
    }
}

/// Per-token knowledge attributes, one value per schema feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub token: String,
    pub index: usize,
    pub features: BTreeMap<String, String>,
}

/// One-hot encodes a record; the result has exactly one 1 per feature block.
pub fn encode_features(record: &FeatureRecord, schema: &FeatureSchema) -> Result<Vec<f64>> {
    let violation = |reason: String| Error::Schema {
        token: record.token.clone(),
        reason,
    };
    for name in record.features.keys() {
        if schema.feature(name).is_none() {
            return Err(violation(format!("unknown feature {name:?}")));
        }
    }
    let mut out = vec![0.0; schema.width()];
    for (feature, offset) in schema.features().iter().zip(schema.offsets()) {
        let value = record
            .features
            .get(feature.name)
            .ok_or_else(|| violation(format!("missing feature {:?}", feature.name)))?;
        let pos = feature
            .values
            .iter()
            .position(|v| v == value)
            .ok_or_else(|| {
                violation(format!(
                    "value {value:?} not admissible for {:?}",
                    feature.name
                ))
            })?;
        out[offset + pos] = 1.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Special,
    SingleChar,
    Empty,
}

/// Vocabulary split into grounded (kept) and frozen (excluded) tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredVocab {
    pub vocab_size: usize,
    pub tokens: Vec<(usize, String)>,
    pub excluded: Vec<(usize, String, ExclusionReason)>,
}

impl FilteredVocab {
    pub fn kept_indices(&self) -> Vec<usize> {
        self.tokens.iter().map(|(i, _)| *i).collect()
    }

    /// `mask[t]` is true when token `t` is kept.
    pub fn kept_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.vocab_size];
        for (i, _) in &self.tokens {
            mask[*i] = true;
        }
        mask
    }
}

pub const DEFAULT_SPECIAL_PATTERNS: [&str; 6] =
    ["[CLS]", "[SEP]", "[PAD]", "[UNK]", "[MASK]", "[unused*]"];

/// Glob match supporting `*` as "any run of characters".
fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() {
        return false;
    }
    let mut rest = &text[first.len()..];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(pos) => rest = &rest[pos + mid.len()..],
            None => return false,
        }
    }
    rest.ends_with(last)
}

/// Drops special tokens and tokens that are a single visible character once a
/// leading `##` continuation prefix is removed.
pub fn filter_vocabulary<S: AsRef<str>>(vocab: &[S], special_patterns: &[&str]) -> FilteredVocab {
    let mut tokens = Vec::new();
    let mut excluded = Vec::new();
    for (i, tok) in vocab.iter().enumerate() {
        let tok = tok.as_ref();
        let visible = tok.strip_prefix("##").unwrap_or(tok);
        let reason = if special_patterns.iter().any(|p| glob_match(p, tok)) {
            Some(ExclusionReason::Special)
        } else {
            match visible.chars().count() {
                0 => Some(ExclusionReason::Empty),
                1 => Some(ExclusionReason::SingleChar),
                _ => None,
            }
        };
        match reason {
            Some(r) => excluded.push((i, tok.to_string(), r)),
            None => tokens.push((i, tok.to_string())),
        }
    }
    FilteredVocab {
        vocab_size: vocab.len(),
        tokens,
        excluded,
    }
}

/// Feature matrix `X` (kept tokens × schema width) plus the vocabulary
/// position of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: Matrix,
    pub kept_indices: Vec<usize>,
}

pub fn build_feature_matrix(
    records: &[FeatureRecord],
    filtered: &FilteredVocab,
    schema: &FeatureSchema,
) -> Result<FeatureMatrix> {
    let kept: HashMap<usize, &str> = filtered
        .tokens
        .iter()
        .map(|(i, t)| (*i, t.as_str()))
        .collect();
    let mut by_index: HashMap<usize, &FeatureRecord> = HashMap::new();
    for rec in records {
        if rec.index >= filtered.vocab_size {
            return Err(Error::Index {
                index: rec.index,
                size: filtered.vocab_size,
            });
        }
        if by_index.insert(rec.index, rec).is_some() {
            return Err(Error::DuplicateRecord {
                index: rec.index,
                token: rec.token.clone(),
            });
        }
        match kept.get(&rec.index) {
            None => log::info!(
                "ignoring feature record for excluded token {:?} (index {})",
                rec.token,
                rec.index
            ),
            Some(tok) if *tok != rec.token => {
                return Err(Error::Schema {
                    token: rec.token.clone(),
                    reason: format!("vocabulary has {tok:?} at index {}", rec.index),
                })
            }
            Some(_) => {}
        }
    }

    let missing: Vec<String> = filtered
        .tokens
        .iter()
        .filter(|(i, _)| !by_index.contains_key(i))
        .map(|(_, t)| t.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }

    let width = schema.width();
    let mut data = Vec::with_capacity(filtered.tokens.len() * width);
    for (i, _) in &filtered.tokens {
        data.extend(encode_features(by_index[i], schema)?);
    }
    Ok(FeatureMatrix {
        x: Matrix::from_vec(filtered.tokens.len(), width, data)?,
        kept_indices: filtered.kept_indices(),
    })
}

/// Hex SHA-256 of a byte buffer; used to tie embeddings to feature files.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn parse_feature_jsonl(text: &str) -> Result<Vec<FeatureRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeatureRecord = serde_json::from_str(line).map_err(|e| Error::Data {
            line: n as u64 + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_feature_jsonl(records: &[FeatureRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("feature records serialize"));
        out.push('\n');
    }
    out
}

/// Reads a feature file, returning its records and SHA-256 fingerprint.
pub fn read_feature_file(path: &Path) -> Result<(Vec<FeatureRecord>, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format {
        offset: e.valid_up_to() as u64,
        reason: "feature file is not UTF-8".into(),
    })?;
    Ok((parse_feature_jsonl(text)?, fingerprint(&bytes)))
}

pub fn write_feature_file(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    fs::write(path, to_feature_jsonl(records)).map_err(|e| Error::io(path, e))
}

/// One token per line; the line number (from zero) is the token index.
pub fn parse_vocab(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect()
}

pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vocab = parse_vocab(&text);
    if vocab.is_empty() {
        return Err(Error::Data {
            line: 1,
            reason: "vocabulary file is empty".into(),
        });
    }
    Ok(vocab)
}

pub fn write_vocab<S: AsRef<str>>(path: &Path, vocab: &[S]) -> Result<()> {
    let mut text = String::new();
    for t in vocab {
        text.push_str(t.as_ref());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
