//! Serial vs parallel execution of the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use groundkit::classifier::{
    batch_loss_and_grad, encode_dataset, evaluate_encoded, ClassifierConfig, EncodedExample, TinyClassifier, Tokenizer,
};
use groundkit::grounding::toy::{check_gradient, toy_problem};
use groundkit::io::{generate_synthetic, SyntheticSpec};
use groundkit::numerics::GradCheckOptions;
use groundkit::Exec;

const POLICIES: [(&str, Exec); 2] = [("serial", Exec::Serial), ("parallel", Exec::Parallel)];

fn workload() -> (TinyClassifier, Vec<EncodedExample>) {
    let corpus = generate_synthetic(&SyntheticSpec {
        vocab_size: 128,
        n_classes: 8,
        train_per_class: 16,
        seed: 1,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let tok = Tokenizer::new(&corpus.vocab, 16).unwrap();
    let cfg = ClassifierConfig {
        dim: 32,
        n_classes: 8,
        max_len: 16,
        ..ClassifierConfig::default()
    };
    let model = TinyClassifier::new(cfg, tok.vocab_size(), None).unwrap();
    (model, encode_dataset(&corpus.train, &tok))
}

fn classifier_batches(c: &mut Criterion) {
    let (model, examples) = workload();
    let batch: Vec<usize> = (0..examples.len()).collect();
    let mut group = c.benchmark_group("batch_loss_and_grad");
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| batch_loss_and_grad(&model, &examples, black_box(&batch), exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("evaluate_encoded");
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_encoded(&model, black_box(&examples), exec).unwrap())
        });
    }
    group.finish();
}

fn grounding_grad_check(c: &mut Criterion) {
    let problem = toy_problem(16, 8, 6, 42).unwrap();
    let mut group = c.benchmark_group("grounding_grad_check");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let opts = GradCheckOptions {
            exec,
            ..GradCheckOptions::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, &opts| {
            b.iter(|| check_gradient(black_box(&problem), 1e-6, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, classifier_batches, grounding_grad_check);
criterion_main!(benches);
