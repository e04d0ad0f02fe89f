use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::error::Error;
use crate::exec::Exec;
use crate::grounding::GroundedEmbedding;
use crate::io::{Dataset, Example};
use crate::numerics::{GradCheckOptions, Matrix};
use crate::rng;

fn vocab() -> Vec<String> {
    let mut v = vec!["[PAD]".to_string(), "[UNK]".to_string()];
    for p in ["a", "b"] {
        for i in 0..10 {
            v.push(format!("{p}{i}"));
        }
    }
    v
}

/// Class 0 texts use only `a*` words and class 1 only `b*` words.
fn separable(n: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, &[rng::label("separable")]);
    let examples = (0..n)
        .map(|i| {
            let label = i % 2;
            let prefix = if label == 0 { "a" } else { "b" };
            let len = r.random_range(3..=6);
            let words: Vec<String> = (0..len).map(|_| format!("{prefix}{}", r.random_range(0..10))).collect();
            Example {
                label,
                text: words.join(" "),
            }
        })
        .collect();
    Dataset::from_examples(examples)
}

fn small_cfg() -> ClassifierConfig {
    ClassifierConfig {
        dim: 16,
        ffn_mult: 2,
        n_classes: 2,
        max_len: 16,
        lr: 5e-3,
        epochs: 3,
        batch_size: 8,
        seed: 11,
        ..Default::default()
    }
}

fn tokenizer() -> Tokenizer {
    Tokenizer::new(&vocab(), 16).unwrap()
}

#[test]
fn tiny_instance_gradient_matches_finite_differences() {
    let cfg = ClassifierConfig {
        dim: 8,
        ffn_mult: 2,
        n_classes: 3,
        max_len: 8,
        seed: 5,
        ..Default::default()
    };
    let model = TinyClassifier::new(cfg, 12, None).unwrap();
    let examples = vec![
        EncodedExample {
            ids: vec![2, 5, 7, 2],
            label: 1,
        },
        EncodedExample {
            ids: vec![3, 11, 4],
            label: 2,
        },
    ];
    let report = check_classifier_gradient(&model, &examples, 1e-6, GradCheckOptions::default()).unwrap();
    assert_eq!(report.checked, model.n_parameters());
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn separable_task_is_learned() {
    let tok = tokenizer();
    let ds = separable(80, 1);
    let cfg = ClassifierConfig {
        epochs: 50,
        ..small_cfg()
    };
    let (model, history) = train_classifier(&cfg, &tok, &ds, Some(&ds), None, Exec::Serial).unwrap();
    assert_eq!(history.len(), 50);
    let result = evaluate(&model, &tok, &ds, Exec::Serial).unwrap();
    assert!(result.accuracy > 0.95, "{result:?}");
    assert!(history[49].train_loss < history[0].train_loss);
}

#[test]
fn training_is_deterministic_across_runs_and_policies() {
    let tok = tokenizer();
    let ds = separable(24, 2);
    let (a, ha) = train_classifier(&small_cfg(), &tok, &ds, None, None, Exec::Serial).unwrap();
    let (b, hb) = train_classifier(&small_cfg(), &tok, &ds, None, None, Exec::Serial).unwrap();
    let (c, _) = train_classifier(&small_cfg(), &tok, &ds, None, None, Exec::Parallel).unwrap();
    assert_eq!(write_checkpoint(&a), write_checkpoint(&b));
    assert_eq!(write_checkpoint(&a), write_checkpoint(&c));
    assert_eq!(ha, hb);
}

#[test]
fn zero_epochs_returns_initialization() {
    let tok = tokenizer();
    let cfg = ClassifierConfig {
        epochs: 0,
        ..small_cfg()
    };
    let (model, history) = train_classifier(&cfg, &tok, &separable(10, 3), None, None, Exec::Serial).unwrap();
    assert!(history.is_empty());
    assert_eq!(model, TinyClassifier::new(cfg, tok.vocab_size(), None).unwrap());
}

fn grounded(rows: usize, dim: usize) -> GroundedEmbedding {
    GroundedEmbedding {
        embedding: Matrix::from_fn(rows, dim, |r, c| (r * dim + c) as f64 * 0.01 - 0.3),
        feature_dim: 39,
        schema_sha256: "0".repeat(64),
        config: None,
    }
}

#[test]
fn grounded_embedding_is_loaded_exactly_and_can_be_frozen() {
    let tok = tokenizer();
    let ge = grounded(tok.vocab_size(), 16);
    let zero = ClassifierConfig {
        epochs: 0,
        ..small_cfg()
    };
    let (m, _) = train_classifier(&zero, &tok, &separable(10, 4), None, Some(&ge), Exec::Serial).unwrap();
    assert_eq!(m.block(EMBEDDING).unwrap().to_le_bytes(), ge.embedding.to_le_bytes());

    let frozen = ClassifierConfig {
        freeze_embedding: true,
        ..small_cfg()
    };
    let (m, _) = train_classifier(&frozen, &tok, &separable(10, 4), None, Some(&ge), Exec::Serial).unwrap();
    assert_eq!(m.block(EMBEDDING).unwrap(), &ge.embedding);
    assert_ne!(m.block(HEAD).unwrap(), TinyClassifier::new(frozen, tok.vocab_size(), None).unwrap().block(HEAD).unwrap());

    let (m, _) = train_classifier(&small_cfg(), &tok, &separable(10, 4), None, Some(&ge), Exec::Serial).unwrap();
    assert_ne!(m.block(EMBEDDING).unwrap(), &ge.embedding);
}

#[test]
fn embedding_dimension_mismatch_is_a_config_error() {
    let tok = tokenizer();
    let ge = grounded(tok.vocab_size(), 8);
    let err = train_classifier(&small_cfg(), &tok, &separable(4, 0), None, Some(&ge), Exec::Serial).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn out_of_range_label_names_its_line() {
    let tok = tokenizer();
    let mut ex = separable(4, 0).examples;
    ex[2].label = 7;
    let err = train_classifier(&small_cfg(), &tok, &Dataset::from_examples(ex), None, None, Exec::Serial).unwrap_err();
    assert!(matches!(err, Error::Data { line: 4, .. }), "{err}");
}

fn zero_head(mut m: TinyClassifier) -> TinyClassifier {
    let shape = m.block(HEAD).unwrap().shape();
    m.set_block(HEAD, Matrix::zeros(shape.0, shape.1)).unwrap();
    m
}

#[test]
fn uniform_logits_give_log_c_loss() {
    let tok = tokenizer();
    let cfg = ClassifierConfig {
        n_classes: 4,
        ..small_cfg()
    };
    let model = zero_head(TinyClassifier::new(cfg, tok.vocab_size(), None).unwrap());
    let ds = Dataset::from_examples(
        (0..5)
            .map(|_| Example {
                label: 2,
                text: "a1 a2".into(),
            })
            .collect(),
    );
    let r = evaluate(&model, &tok, &ds, Exec::Serial).unwrap();
    assert!((r.mean_loss - 4f64.ln()).abs() < 1e-12);
    assert!((r.mean_loss - 1.3863).abs() < 1e-4);
}

#[test]
fn constant_predictor_on_balanced_data_scores_chance() {
    let tok = tokenizer();
    let cfg = ClassifierConfig {
        n_classes: 4,
        ..small_cfg()
    };
    let mut model = zero_head(TinyClassifier::new(cfg, tok.vocab_size(), None).unwrap());
    let mut head = model.block(HEAD).unwrap().clone();
    head.set(16, 3, 5.0);
    model.set_block(HEAD, head).unwrap();
    let ds = Dataset::from_examples(
        (0..40)
            .map(|i| Example {
                label: i % 4,
                text: "b3".into(),
            })
            .collect(),
    );
    let r = evaluate(&model, &tok, &ds, Exec::Serial).unwrap();
    assert_eq!(r.accuracy, 0.25);
    assert_eq!(r.class_totals, vec![10; 4]);
    assert_eq!(r.class_correct, vec![0, 0, 0, 10]);

    let only_three = Dataset::from_examples(ds.examples.into_iter().filter(|e| e.label == 3).collect());
    assert_eq!(evaluate(&model, &tok, &only_three, Exec::Serial).unwrap().accuracy, 1.0);
}

#[test]
fn evaluation_ignores_example_order_and_policy() {
    let tok = tokenizer();
    let (model, _) = train_classifier(&small_cfg(), &tok, &separable(16, 5), None, None, Exec::Serial).unwrap();
    let ds = separable(30, 6);
    let base = evaluate(&model, &tok, &ds, Exec::Serial).unwrap();
    let mut shuffled = ds.examples.clone();
    shuffled.shuffle(&mut rng::stream(9, &[]));
    let permuted = evaluate(&model, &tok, &Dataset::from_examples(shuffled), Exec::Serial).unwrap();
    assert_eq!(base, permuted);
    assert_eq!(base, evaluate(&model, &tok, &ds, Exec::Parallel).unwrap());
    assert_eq!(base.class_totals.iter().sum::<usize>(), base.n_examples);
    assert!((0.0..=1.0).contains(&base.accuracy));
}

#[test]
fn empty_evaluation_set_is_a_data_error() {
    let tok = tokenizer();
    let model = TinyClassifier::new(small_cfg(), tok.vocab_size(), None).unwrap();
    assert!(matches!(
        evaluate(&model, &tok, &Dataset::default(), Exec::Serial),
        Err(Error::Data { .. })
    ));
}

#[test]
fn metrics_csv_has_one_row_per_epoch() {
    let tok = tokenizer();
    let ds = separable(12, 7);
    let (_, h) = train_classifier(&small_cfg(), &tok, &ds, Some(&ds), None, Exec::Serial).unwrap();
    let csv = classifier_metrics_csv(&h);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("epoch,train_loss,val_loss,val_accuracy\n"));
}
