use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::json;

use groundkit::classifier::{
    check_classifier_gradient, classifier_metrics_csv, evaluate, load_checkpoint, save_checkpoint,
    train_classifier, ClassifierConfig, EncodedExample, TinyClassifier, Tokenizer,
};
use groundkit::features::{
    build_feature_matrix, filter_vocabulary, read_feature_file, read_vocab, FeatureSchema, DEFAULT_SPECIAL_PATTERNS,
};
use groundkit::grounding::toy::{check_gradient, toy_problem};
use groundkit::grounding::{
    export_embedding, import_embedding, metrics_csv, train_grounding, FingerprintCheck, GroundingConfig,
};
use groundkit::io::{coarsen_labels, generate_synthetic, load_dataset, write_corpus, write_dataset, SyntheticSpec};
use groundkit::numerics::GradCheckOptions;
use groundkit::numerics::Matrix;
use groundkit::saturation::{
    base_projector, normalized_angle, rotation_matrix, token_operator, OperatorBank, DEFAULT_LOWER, DEFAULT_UPPER,
};
use groundkit::swap::{emit_report, load_inputs, mean_delta, run_swap_experiment, ExperimentPlan};
use groundkit::{Error, Exec, Result};

use crate::args::*;

pub const GROUNDING_TOLERANCE: f64 = 1e-4;
pub const CLASSIFIER_TOLERANCE: f64 = 1e-3;
pub const EXIT_CHECK_FAILED: i32 = 3;

pub struct Context {
    pub seed: Option<u64>,
    pub exec: Exec,
}

/// Parses `GROUNDKIT_SEED` when set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var("GROUNDKIT_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("GROUNDKIT_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Reads a JSON config, also returning the top-level keys it set.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, BTreeSet<String>)> {
    let Some(path) = path else {
        return Ok((T::default(), BTreeSet::new()));
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    let keys = value
        .as_object()
        .map(|o| o.keys().cloned().collect())
        .unwrap_or_default();
    Ok((serde_json::from_value(value).map_err(bad)?, keys))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Result<i32> {
    let (mut spec, _) = load_config::<SyntheticSpec>(a.config.as_deref())?;
    if let Some(v) = a.vocab {
        spec.vocab_size = v;
    }
    if let Some(c) = a.classes {
        spec.n_classes = c;
    }
    if let Some(n) = a.train_per_class {
        spec.train_per_class = n;
    }
    if let Some(n) = a.test_per_class {
        spec.test_per_class = n;
    }
    if let Some(c) = a.coherence {
        spec.coherence = c;
    }
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    if let Some(s) = ctx.seed {
        spec.seed = s;
    }
    if a.coarse == Some(0) {
        return Err(Error::Config("--coarse must be at least 1".into()));
    }
    let corpus = generate_synthetic(&spec)?;
    let paths = write_corpus(&corpus, &a.out)?;
    let mut written = vec![paths.vocab, paths.features, paths.train, paths.test];
    if let Some(k) = a.coarse {
        for (name, ds) in [("train_coarse.csv", &corpus.train), ("test_coarse.csv", &corpus.test)] {
            let p = a.out.join(name);
            write_dataset(&p, &coarsen_labels(ds, k))?;
            written.push(p);
        }
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(0)
}

pub fn ground(ctx: &Context, a: &GroundArgs) -> Result<i32> {
    let (mut cfg, _) = load_config::<GroundingConfig>(a.config.as_deref())?;
    if let Some(d) = a.dim {
        cfg.dim = d;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_tokens {
        cfg.batch_tokens = b;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let vocab = read_vocab(&a.vocab)?;
    let filtered = filter_vocabulary(&vocab, &DEFAULT_SPECIAL_PATTERNS);
    let (records, fingerprint) = read_feature_file(&a.features)?;
    let fm = build_feature_matrix(&records, &filtered, &FeatureSchema)?;
    log::info!(
        "grounding {} of {} tokens ({} excluded)",
        filtered.tokens.len(),
        vocab.len(),
        filtered.excluded.len()
    );
    let (ge, metrics) = train_grounding(&cfg, &fm, &filtered, &fingerprint)?;
    export_embedding(&ge, &a.out)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| with_suffix(&a.out, ".metrics.csv"));
    write_file(&metrics_path, metrics_csv(&metrics))?;
    let config_path = with_suffix(&a.out, ".config.json");
    let echo = serde_json::to_vec_pretty(&cfg).expect("config serializes");
    write_file(&config_path, echo)?;
    let last = metrics.last();
    print_json(&json!({
        "embedding": a.out,
        "metrics": metrics_path,
        "config": config_path,
        "vocab_size": ge.vocab_size(),
        "dim": ge.dim(),
        "kept_tokens": filtered.tokens.len(),
        "epochs": metrics.len(),
        "first_l_recon": metrics.first().map(|m| m.l_recon),
        "final_l_recon": last.map(|m| m.l_recon),
        "final_l_total": last.map(|m| m.l_total),
    }));
    Ok(0)
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Result<i32> {
    let (mut cfg, keys) = load_config::<ClassifierConfig>(a.config.as_deref())?;
    if let Some(d) = a.dim {
        cfg.dim = d;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if a.freeze_embedding {
        cfg.freeze_embedding = true;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let train = load_dataset(&a.train)?;
    match a.classes {
        Some(c) => cfg.n_classes = c,
        None if !keys.contains("n_classes") => cfg.n_classes = train.n_classes().max(2),
        None => {}
    }
    let val = a.val.as_deref().map(load_dataset).transpose()?;
    let vocab = read_vocab(&a.vocab)?;
    let tok = Tokenizer::new(&vocab, cfg.max_len)?;
    let embedding = match &a.embedding {
        Some(p) => {
            let ge = import_embedding(p, None)?;
            if let Some(f) = &a.features {
                let bytes = fs::read(f).map_err(|e| Error::Io {
                    path: f.clone(),
                    source: e,
                })?;
                if let FingerprintCheck::Mismatch { expected, actual } = ge.check_fingerprint(&bytes) {
                    log::warn!("{} was grounded on a different feature file ({expected} vs {actual})", p.display());
                    eprintln!("warning: feature fingerprint mismatch for {}", p.display());
                }
            }
            Some(ge)
        }
        None => None,
    };
    let (model, history) = train_classifier(&cfg, &tok, &train, val.as_ref(), embedding.as_ref(), ctx.exec)?;
    save_checkpoint(&model, &a.out)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| with_suffix(&a.out, ".metrics.csv"));
    write_file(&metrics_path, classifier_metrics_csv(&history))?;
    let last = history.last();
    print_json(&json!({
        "checkpoint": a.out,
        "metrics": metrics_path,
        "n_classes": cfg.n_classes,
        "parameters": model.n_parameters(),
        "epochs": history.len(),
        "final_train_loss": last.map(|h| h.train_loss),
        "final_val_accuracy": last.and_then(|h| h.val_accuracy),
    }));
    Ok(0)
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<i32> {
    let model = load_checkpoint(&a.checkpoint)?;
    let vocab = read_vocab(&a.vocab)?;
    if vocab.len() != model.vocab_size() {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens, checkpoint expects {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let tok = Tokenizer::new(&vocab, model.config().max_len)?;
    let data = load_dataset(&a.data)?;
    let result = evaluate(&model, &tok, &data, ctx.exec)?;
    print_json(&serde_json::to_value(&result).expect("result serializes"));
    Ok(0)
}

pub fn swap(ctx: &Context, a: &SwapArgs) -> Result<i32> {
    let mut plan = ExperimentPlan::from_file(&a.plan)?;
    if let Some(s) = ctx.seed {
        plan.seeds = vec![s];
    }
    plan.validate()?;
    let inputs = load_inputs(&plan)?;
    let report = run_swap_experiment(&plan, &inputs, ctx.exec)?;
    let paths = emit_report(&report, &a.out)?;
    let mut deltas = Vec::new();
    for &variant in &plan.variants {
        for module in &plan.swap {
            deltas.push(json!({
                "variant": variant.as_str(),
                "module": module,
                "mean_delta_accuracy": mean_delta(&report, variant, module),
            }));
        }
    }
    print_json(&json!({
        "rows": report.rows.len(),
        "files": paths,
        "deltas": deltas,
    }));
    Ok(0)
}

/// Fixed small instances so the check is fast and reproducible.
pub fn gradcheck(ctx: &Context, a: &GradcheckArgs) -> Result<i32> {
    let seed = ctx.seed.unwrap_or(42);
    let opts = GradCheckOptions {
        seed,
        exec: ctx.exec,
        ..GradCheckOptions::default()
    };
    let (report, tolerance) = match a.target {
        GradTarget::Grounding => {
            let problem = toy_problem(16, 8, 6, seed)?;
            (check_gradient(&problem, a.epsilon, opts)?, GROUNDING_TOLERANCE)
        }
        GradTarget::Classifier => {
            let cfg = ClassifierConfig {
                dim: 8,
                ffn_mult: 2,
                n_classes: 3,
                max_len: 8,
                seed,
                ..ClassifierConfig::default()
            };
            let model = TinyClassifier::new(cfg, 12, None)?;
            let examples = [
                EncodedExample {
                    ids: vec![2, 5, 7, 2],
                    label: 1,
                },
                EncodedExample {
                    ids: vec![3, 11, 4],
                    label: 2,
                },
            ];
            (check_classifier_gradient(&model, &examples, a.epsilon, opts)?, CLASSIFIER_TOLERANCE)
        }
    };
    let pass = report.max_rel_error < tolerance;
    println!(
        "max relative error {:.3e} over {} coordinates (tolerance {tolerance:e}): {}",
        report.max_rel_error,
        report.checked,
        if pass { "pass" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { EXIT_CHECK_FAILED })
}

pub fn inspect(_ctx: &Context, a: &InspectArgs) -> Result<i32> {
    match &a.what {
        InspectWhat::Operator {
            vocab_size,
            token,
            dim,
            feature_dim,
        } => {
            let base = base_projector(*dim, *feature_dim, DEFAULT_LOWER, DEFAULT_UPPER)?;
            match token {
                Some(t) => {
                    let theta = normalized_angle(*t, *vocab_size)?;
                    let r = rotation_matrix(theta, *feature_dim);
                    let orth = r.matmul_t(&r)?.sub(&Matrix::identity(*feature_dim))?.max_abs();
                    let op = token_operator(&base, *t, *vocab_size)?;
                    print_json(&json!({
                        "token": t,
                        "theta": theta,
                        "rotation_orthogonality_error": orth,
                        "operator_shape": [op.matrix().rows(), op.matrix().cols()],
                        "operator_frobenius_norm": op.matrix().frobenius_norm(),
                        "base_frobenius_norm": base.matrix().frobenius_norm(),
                    }));
                }
                None => {
                    let tokens: Vec<usize> = (0..*vocab_size).collect();
                    let bank = OperatorBank::new(&base, *vocab_size, &tokens)?;
                    let distinct: BTreeSet<Vec<u64>> = (0..bank.len())
                        .map(|i| bank.get(i).matrix().as_slice().iter().map(|x| x.to_bits()).collect())
                        .collect();
                    print_json(&json!({
                        "vocab_size": vocab_size,
                        "operators": bank.len(),
                        "distinct_operators": distinct.len(),
                        "theta_min": normalized_angle(0, *vocab_size)?,
                        "theta_max": normalized_angle(vocab_size.saturating_sub(1), *vocab_size)?,
                    }));
                }
            }
        }
        InspectWhat::Embedding { path, features } => {
            let ge = import_embedding(path, None)?;
            let norms: Vec<f64> = (0..ge.vocab_size())
                .map(|r| ge.embedding.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            let n = norms.len().max(1) as f64;
            let fingerprint = match features {
                Some(f) => {
                    let (_, actual) = read_feature_file(f)?;
                    Some(actual == ge.schema_sha256)
                }
                None => None,
            };
            print_json(&json!({
                "vocab_size": ge.vocab_size(),
                "dim": ge.dim(),
                "feature_dim": ge.feature_dim,
                "schema_sha256": ge.schema_sha256,
                "fingerprint_matches": fingerprint,
                "row_norm_mean": norms.iter().sum::<f64>() / n,
                "row_norm_min": norms.iter().copied().fold(f64::INFINITY, f64::min),
                "row_norm_max": norms.iter().copied().fold(0.0, f64::max),
            }));
        }
    }
    Ok(0)
}
