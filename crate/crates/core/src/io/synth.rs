//! Deterministic synthetic corpora: topic-grouped vocabularies with
//! knowledge features and bag-of-topic-word documents.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{write_dataset, Dataset, Example};
use crate::error::{Error, Result};
use crate::features::{write_feature_file, write_vocab, FeatureRecord, FeatureSchema};
use crate::rng;

const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Content tokens; special tokens and single letters are added on top.
    pub vocab_size: usize,
    /// One topic group per class.
    pub n_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Probability that a token takes its topic's value for each feature.
    pub coherence: f64,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    /// Probability that a document word is drawn from the whole vocabulary
    /// instead of the document's topic.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            n_classes: 4,
            train_per_class: 50,
            test_per_class: 20,
            coherence: 1.0,
            min_doc_len: 4,
            max_doc_len: 10,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.train_per_class == 0 || self.test_per_class == 0 || self.min_doc_len == 0 {
            return Err(Error::Config("synthetic counts must be at least 1".into()));
        }
        if self.vocab_size < self.n_classes {
            return Err(Error::Config(format!(
                "vocab_size {} cannot cover {} topics",
                self.vocab_size, self.n_classes
            )));
        }
        if self.max_doc_len < self.min_doc_len {
            return Err(Error::Config("max_doc_len is below min_doc_len".into()));
        }
        for (name, p) in [("coherence", self.coherence), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub vocab: Vec<String>,
    pub features: Vec<FeatureRecord>,
    /// Topic of each content token, keyed by vocabulary index.
    pub topics: BTreeMap<usize, usize>,
    pub train: Dataset,
    pub test: Dataset,
}

fn content_token(topic: usize, k: usize) -> String {
    format!("t{topic}w{k}")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let schema = FeatureSchema;

    let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    vocab.extend(('a'..='z').map(String::from));
    let first_content = vocab.len();
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); spec.n_classes];
    let mut topics = BTreeMap::new();
    for k in 0..spec.vocab_size {
        let topic = k % spec.n_classes;
        let idx = vocab.len();
        vocab.push(content_token(topic, k / spec.n_classes));
        by_topic[topic].push(idx);
        topics.insert(idx, topic);
    }

    // distinct value assignment per topic
    let mut proto_rng = rng::stream(spec.seed, &[rng::label("synth-prototypes")]);
    let mut seen = HashSet::new();
    let mut prototypes = Vec::with_capacity(spec.n_classes);
    while prototypes.len() < spec.n_classes {
        let p: Vec<usize> = schema
            .features()
            .iter()
            .map(|f| proto_rng.random_range(0..f.values.len()))
            .collect();
        if seen.insert(p.clone()) {
            prototypes.push(p);
        }
    }

    let mut feat_rng = rng::stream(spec.seed, &[rng::label("synth-features")]);
    let mut features = Vec::with_capacity(spec.vocab_size);
    for (&idx, &topic) in &topics {
        let mut map = BTreeMap::new();
        for (f, &proto) in schema.features().iter().zip(&prototypes[topic]) {
            let value = if feat_rng.random_bool(spec.coherence) {
                proto
            } else {
                feat_rng.random_range(0..f.values.len())
            };
            map.insert(f.name.to_string(), f.values[value].to_string());
        }
        features.push(FeatureRecord {
            token: vocab[idx].clone(),
            index: idx,
            features: map,
        });
    }

    let content: Vec<usize> = (first_content..vocab.len()).collect();
    let documents = |split: &str, per_class: usize| {
        let mut r = rng::stream(spec.seed, &[rng::label("synth-docs"), rng::label(split)]);
        let mut out = Vec::with_capacity(per_class * spec.n_classes);
        for _ in 0..per_class {
            for (label, pool) in by_topic.iter().enumerate() {
                let len = r.random_range(spec.min_doc_len..=spec.max_doc_len);
                let words: Vec<&str> = (0..len)
                    .map(|_| {
                        let from = if r.random_bool(spec.noise) { &content } else { pool };
                        vocab[from[r.random_range(0..from.len())]].as_str()
                    })
                    .collect();
                out.push(Example {
                    label,
                    text: words.join(" "),
                });
            }
        }
        Dataset::from_examples(out)
    };

    Ok(SyntheticCorpus {
        train: documents("train", spec.train_per_class),
        test: documents("test", spec.test_per_class),
        vocab,
        features,
        topics,
    })
}

/// Relabels every example with `label % n_coarse`, merging topics into a
/// coarser task over the same vocabulary.
pub fn coarsen_labels(ds: &Dataset, n_coarse: usize) -> Dataset {
    Dataset::from_examples(
        ds.iter()
            .map(|e| Example {
                label: e.label % n_coarse.max(1),
                text: e.text.clone(),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub vocab: PathBuf,
    pub features: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
}

impl CorpusPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            vocab: dir.join("vocab.txt"),
            features: dir.join("features.jsonl"),
            train: dir.join("train.csv"),
            test: dir.join("test.csv"),
        }
    }
}

pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<CorpusPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = CorpusPaths::in_dir(dir);
    write_vocab(&paths.vocab, &corpus.vocab)?;
    write_feature_file(&paths.features, &corpus.features)?;
    write_dataset(&paths.train, &corpus.train)?;
    write_dataset(&paths.test, &corpus.test)?;
    Ok(paths)
}
