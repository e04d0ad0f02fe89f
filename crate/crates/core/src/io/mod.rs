//! Dataset files and the synthetic corpus generator.

mod dataset;
mod synth;

pub use dataset::{dataset_to_csv, load_dataset, parse_dataset, write_dataset, Dataset, Example};
pub use synth::{coarsen_labels, generate_synthetic, write_corpus, CorpusPaths, SyntheticCorpus, SyntheticSpec};
