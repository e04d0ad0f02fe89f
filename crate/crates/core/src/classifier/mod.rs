//! Small encoder classifier with named, swappable parameter blocks.

pub mod checkpoint;
pub mod model;
pub mod tokenizer;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointManifest};
pub use model::{sinusoidal_positions, ClassifierConfig, PaddedBatch, TinyClassifier, EMBEDDING, HEAD};
pub use tokenizer::Tokenizer;
pub use train::{
    argmax, batch_loss_and_grad, check_classifier_gradient, classifier_metrics_csv, encode_dataset, evaluate, evaluate_encoded, fit,
    train_classifier, ClassifierEpoch, EncodedExample, EvalResult,
};

#[cfg(test)]
mod tests;
