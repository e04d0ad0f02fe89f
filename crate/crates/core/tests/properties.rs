use std::collections::BTreeMap;

use proptest::prelude::*;

use groundkit::classifier::{
    read_checkpoint, write_checkpoint, ClassifierConfig, PaddedBatch, TinyClassifier, Tokenizer,
};
use groundkit::features::{
    encode_features, filter_vocabulary, parse_feature_jsonl, to_feature_jsonl, FeatureRecord, FeatureSchema,
    DEFAULT_SPECIAL_PATTERNS,
};
use groundkit::grounding::{read_embedding, write_embedding, GroundedEmbedding};
use groundkit::io::{dataset_to_csv, parse_dataset, Dataset, Example};
use groundkit::numerics::{AdamParams, AdamState, Matrix};
use groundkit::saturation::{base_projector, project, project_rows, rotation_matrix, token_operator};
use groundkit::swap::swap_module;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn record() -> impl Strategy<Value = FeatureRecord> {
    let choices: Vec<_> = FeatureSchema
        .features()
        .iter()
        .map(|f| (0..f.values.len()).prop_map(move |i| (f.name.to_string(), f.values[i].to_string())))
        .collect();
    (choices, 0usize..1000).prop_map(|(kv, index)| FeatureRecord {
        token: format!("tok{index}"),
        index,
        features: kv.into_iter().collect::<BTreeMap<_, _>>(),
    })
}

fn vocab_entry() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("[PAD]".to_string()),
        Just("[CLS]".to_string()),
        "\\[unused[0-9]{1,3}\\]",
        "[a-z]",
        "##[a-z]{0,4}",
        "[a-z]{1,6}",
        "",
    ]
}

fn small_model(seed: u64, n_classes: usize) -> TinyClassifier {
    let cfg = ClassifierConfig {
        dim: 8,
        ffn_mult: 2,
        n_classes,
        max_len: 10,
        seed,
        ..ClassifierConfig::default()
    };
    TinyClassifier::new(cfg, 20, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_hot_encoding_has_one_entry_per_feature(rec in record()) {
        let v = encode_features(&rec, &FeatureSchema).unwrap();
        prop_assert_eq!(v.len(), 39);
        prop_assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));
        prop_assert_eq!(v.iter().sum::<f64>(), 8.0);
        for (f, offset) in FeatureSchema.features().iter().zip(FeatureSchema.offsets()) {
            prop_assert_eq!(v[offset..offset + f.values.len()].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn feature_jsonl_round_trips(recs in prop::collection::vec(record(), 0..8)) {
        let text = to_feature_jsonl(&recs);
        let back = parse_feature_jsonl(&text).unwrap();
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(to_feature_jsonl(&back), text);
    }

    #[test]
    fn filtering_partitions_and_is_idempotent(vocab in prop::collection::vec(vocab_entry(), 0..40)) {
        let once = filter_vocabulary(&vocab, &DEFAULT_SPECIAL_PATTERNS);
        prop_assert_eq!(once.tokens.len() + once.excluded.len(), vocab.len());
        let mut seen: Vec<usize> = once.kept_indices();
        seen.extend(once.excluded.iter().map(|(i, _, _)| *i));
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..vocab.len()).collect::<Vec<_>>());
        for (_, t) in &once.tokens {
            prop_assert!(t.trim_start_matches("##").chars().count() > 1);
            prop_assert!(!t.starts_with('['));
        }
        let kept: Vec<String> = once.tokens.iter().map(|(_, t)| t.clone()).collect();
        let twice = filter_vocabulary(&kept, &DEFAULT_SPECIAL_PATTERNS);
        prop_assert!(twice.excluded.is_empty());
        let names: Vec<String> = twice.tokens.into_iter().map(|(_, t)| t).collect();
        prop_assert_eq!(names, kept);
    }

    #[test]
    fn rotations_are_orthogonal(theta in 0.0f64..1.0, f in 1usize..=16) {
        let r = rotation_matrix(theta, f);
        let err = r.matmul_t(&r).unwrap().sub(&Matrix::identity(f)).unwrap().max_abs();
        prop_assert!(err < 1e-12, "{}", err);
    }

    #[test]
    fn projection_is_linear(
        e1 in prop::collection::vec(-3.0f64..3.0, 12),
        e2 in prop::collection::vec(-3.0f64..3.0, 12),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        t in 0usize..50,
    ) {
        let base = base_projector(12, 7, 0.55, 0.45).unwrap();
        let op = token_operator(&base, t, 50).unwrap();
        let mixed: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + b * y).collect();
        let lhs = project(&mixed, &op).unwrap();
        let (p1, p2) = (project(&e1, &op).unwrap(), project(&e2, &op).unwrap());
        for k in 0..7 {
            prop_assert!((lhs[k] - (a * p1[k] + b * p2[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn row_projection_matches_per_row(e in matrix(5, 8), tokens in prop::collection::vec(0usize..30, 5)) {
        let base = base_projector(8, 6, 0.55, 0.45).unwrap();
        let ops: Vec<_> = tokens.iter().map(|&t| token_operator(&base, t, 30).unwrap()).collect();
        let refs: Vec<_> = ops.iter().collect();
        let stacked = project_rows(&e, &refs).unwrap();
        for (i, op) in ops.iter().enumerate() {
            let row = project(e.row(i), op).unwrap();
            prop_assert_eq!(stacked.row(i), row.as_slice());
        }
    }

    #[test]
    fn identity_product_is_exact(a in matrix(4, 6)) {
        prop_assert_eq!(Matrix::identity(4).matmul(&a).unwrap(), a);
    }

    #[test]
    fn adam_moments_track_parameter_shapes(g in matrix(3, 2), steps in 1usize..5) {
        let mut state = AdamState::new(AdamParams::default(), &[(3, 2)]);
        let mut p = Matrix::zeros(3, 2);
        for k in 0..steps {
            state.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
            prop_assert_eq!(state.step_count(), k as u64 + 1);
        }
        let (m, v) = state.moments(0);
        prop_assert_eq!(m.shape(), (3, 2));
        prop_assert_eq!(v.shape(), (3, 2));
    }

    #[test]
    fn embedding_file_round_trips(e in matrix(6, 5), sha in "[0-9a-f]{64}") {
        let ge = GroundedEmbedding { embedding: e, feature_dim: 3, schema_sha256: sha, config: None };
        let bytes = write_embedding(&ge);
        let back = read_embedding(&bytes).unwrap();
        prop_assert_eq!(back.embedding.to_le_bytes(), ge.embedding.to_le_bytes());
        prop_assert_eq!(write_embedding(&back), bytes);
    }

    #[test]
    fn truncated_embedding_files_are_rejected(e in matrix(3, 4), cut in 1usize..96) {
        let bytes = write_embedding(&GroundedEmbedding {
            embedding: e, feature_dim: 2, schema_sha256: "ab".into(), config: None,
        });
        prop_assert!(read_embedding(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn dataset_csv_round_trips(rows in prop::collection::vec((0usize..5, "[ -~\n\"]{0,30}"), 1..12)) {
        let ds = Dataset::from_examples(rows.into_iter().map(|(label, text)| Example { label, text }).collect());
        let bytes = dataset_to_csv(&ds);
        let back = parse_dataset(&bytes).unwrap();
        prop_assert_eq!(&back.examples, &ds.examples);
        prop_assert_eq!(dataset_to_csv(&back), bytes);
    }

    #[test]
    fn tokenizer_output_is_bounded(text in "\\PC{0,80}", max_len in 1usize..20) {
        let vocab = ["[PAD]", "[UNK]", "the", "un", "##believ", "##able", "a", "##s", ",", "."];
        let tok = Tokenizer::new(&vocab, max_len).unwrap();
        let ids = tok.tokenize(&text);
        prop_assert!(ids.len() <= max_len);
        prop_assert!(ids.iter().all(|&i| i < tok.vocab_size()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn swap_is_an_involution(s1 in 0u64..1000, s2 in 0u64..1000, pick in 0usize..32) {
        let (a, b) = (small_model(s1, 3), small_model(s2, 3));
        let names = a.block_names().to_vec();
        let name = &names[pick % names.len()];
        let (a1, b1) = swap_module(&a, &b, name).unwrap();
        let (a2, b2) = swap_module(&a1, &b1, name).unwrap();
        prop_assert_eq!(a2, a);
        prop_assert_eq!(b2, b);
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..1000, n_classes in 2usize..6) {
        let m = small_model(seed, n_classes);
        let bytes = write_checkpoint(&m);
        let back = read_checkpoint(&bytes).unwrap();
        prop_assert_eq!(write_checkpoint(&back), bytes);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn logits_ignore_padding(
        seed in 0u64..100,
        seq in prop::collection::vec(0usize..20, 0..10),
        junk in prop::collection::vec(0usize..20, 10),
    ) {
        let m = small_model(seed, 3);
        let mut batch = PaddedBatch::new(&[seq.clone(), vec![1; 10]], 0);
        let clean = m.forward(&batch).unwrap();
        for c in seq.len()..batch.ids.cols() {
            batch.ids.set(0, c, junk[c] as f64);
        }
        let noisy = m.forward(&batch).unwrap();
        prop_assert_eq!(clean.row(0).to_vec(), noisy.row(0).to_vec());
        prop_assert_eq!(clean.row(0).to_vec(), m.logits(&seq).unwrap());
    }
}
