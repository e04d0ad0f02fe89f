use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{ClassifierConfig, TinyClassifier};
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grounding::GroundedEmbedding;
use crate::io::Dataset;
use crate::numerics::{grad_check, AdamParams, AdamState, GradCheckOptions, GradCheckReport, Matrix, Objective};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub label: usize,
}

pub fn encode_dataset(ds: &Dataset, tok: &Tokenizer) -> Vec<EncodedExample> {
    ds.iter()
        .map(|e| EncodedExample {
            ids: tok.tokenize(&e.text),
            label: e.label,
        })
        .collect()
}

/// Mean cross-entropy over `batch` and its gradient, one matrix per block in
/// model order. Per-example work may run in parallel; the sums are always
/// taken in batch order.
pub fn batch_loss_and_grad(
    model: &TinyClassifier,
    examples: &[EncodedExample],
    batch: &[usize],
    exec: Exec,
) -> Result<(f64, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let parts = exec.map(batch, |&i| model.example_grad(&examples[i].ids, examples[i].label));
    let mut grads: Vec<Matrix> = model
        .blocks()
        .iter()
        .map(|b| Matrix::zeros(b.rows(), b.cols()))
        .collect();
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for part in parts {
        let part = part?;
        loss += part.loss;
        for (r, &tok) in part.token_rows.iter().enumerate() {
            let dst = grads[0].row_mut(tok);
            for (d, g) in dst.iter_mut().zip(part.token_grad.row(r)) {
                *d += g;
            }
        }
        for (acc, g) in grads[1..].iter_mut().zip(&part.dense) {
            acc.add_assign(g)?;
        }
    }
    for g in &mut grads {
        *g = g.scale(inv);
    }
    Ok((loss * inv, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub fn classifier_metrics_csv(rows: &[ClassifierEpoch]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{:.17e},{},{}\n",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_accuracy)
        ));
    }
    out
}

/// Trains from scratch or from a grounded embedding. Returns the final model
/// and one metrics row per epoch.
pub fn train_classifier(
    cfg: &ClassifierConfig,
    tok: &Tokenizer,
    train: &Dataset,
    val: Option<&Dataset>,
    embedding: Option<&GroundedEmbedding>,
    exec: Exec,
) -> Result<(TinyClassifier, Vec<ClassifierEpoch>)> {
    cfg.validate()?;
    train.check_labels(cfg.n_classes)?;
    if let Some(v) = val {
        v.check_labels(cfg.n_classes)?;
    }
    if tok.max_len() > cfg.max_len {
        return Err(Error::Config(format!(
            "tokenizer max_len {} exceeds classifier max_len {}",
            tok.max_len(),
            cfg.max_len
        )));
    }
    let model = TinyClassifier::new(cfg.clone(), tok.vocab_size(), embedding.map(|e| &e.embedding))?;
    let examples = encode_dataset(train, tok);
    let val = val.map(|v| encode_dataset(v, tok));
    fit(model, &examples, val.as_deref(), exec)
}

/// Training loop on pre-tokenized data.
pub fn fit(
    mut model: TinyClassifier,
    examples: &[EncodedExample],
    val: Option<&[EncodedExample]>,
    exec: Exec,
) -> Result<(TinyClassifier, Vec<ClassifierEpoch>)> {
    let cfg = model.config().clone();
    let shapes: Vec<(usize, usize)> = model.blocks().iter().map(Matrix::shape).collect();
    let mut adam = AdamState::new(
        AdamParams {
            lr: cfg.lr,
            ..AdamParams::default()
        },
        &shapes,
    );
    let frozen = vec![false; model.vocab_size()];
    let mut masks: Vec<Option<&[bool]>> = vec![None; shapes.len()];
    if cfg.freeze_embedding {
        masks[0] = Some(&frozen);
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[rng::label("classifier-shuffle"), epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_loss_and_grad(&model, examples, batch, exec)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    reason: format!("non-finite loss or gradient (loss = {loss})"),
                });
            }
            let mut params: Vec<&mut Matrix> = model.blocks_mut().iter_mut().collect();
            adam.step_masked(&mut params, &grads, Some(&masks))?;
            total += loss;
            batches += 1;
        }
        let (val_loss, val_accuracy) = match val {
            Some(v) if !v.is_empty() => {
                let r = evaluate_encoded(&model, v, exec)?;
                (Some(r.mean_loss), Some(r.accuracy))
            }
            _ => (None, None),
        };
        let train_loss = if batches == 0 { 0.0 } else { total / batches as f64 };
        log::debug!("classifier epoch {epoch}: train {train_loss:.5}");
        history.push(ClassifierEpoch {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub n_examples: usize,
    /// Examples per true label.
    pub class_totals: Vec<usize>,
    /// Correct predictions per true label.
    pub class_correct: Vec<usize>,
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(model: &TinyClassifier, tok: &Tokenizer, ds: &Dataset, exec: Exec) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(Error::Data {
            line: 1,
            reason: "evaluation dataset is empty".into(),
        });
    }
    ds.check_labels(model.n_classes())?;
    evaluate_encoded(model, &encode_dataset(ds, tok), exec)
}

pub fn evaluate_encoded(model: &TinyClassifier, examples: &[EncodedExample], exec: Exec) -> Result<EvalResult> {
    if examples.is_empty() {
        return Err(Error::Data {
            line: 1,
            reason: "evaluation dataset is empty".into(),
        });
    }
    let c = model.n_classes();
    let scored = exec.map(examples, |ex| -> Result<(f64, bool)> {
        if ex.label >= c {
            return Err(Error::Contract(format!("label {} outside 0..{c}", ex.label)));
        }
        let logits = model.logits(&ex.ids)?;
        let loss = crate::numerics::tape::log_sum_exp(&logits) - logits[ex.label];
        Ok((loss, argmax(&logits) == ex.label))
    });
    let mut class_totals = vec![0; c];
    let mut class_correct = vec![0; c];
    let mut losses = Vec::with_capacity(examples.len());
    for (ex, s) in examples.iter().zip(scored) {
        let (l, hit) = s?;
        losses.push(l);
        class_totals[ex.label] += 1;
        if hit {
            class_correct[ex.label] += 1;
        }
    }
    // summing in sorted order makes the result independent of example order
    losses.sort_by(f64::total_cmp);
    let loss: f64 = losses.iter().sum();
    let n = examples.len();
    Ok(EvalResult {
        accuracy: class_correct.iter().sum::<usize>() as f64 / n as f64,
        mean_loss: loss / n as f64,
        n_examples: n,
        class_totals,
        class_correct,
    })
}

struct ClassifierObjective<'a> {
    template: &'a TinyClassifier,
    examples: &'a [EncodedExample],
}

impl Objective for ClassifierObjective<'_> {
    fn value(&self, params: &[Matrix]) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    fn value_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        let t = self.template;
        let model = TinyClassifier::from_parts(t.config().clone(), t.vocab_size(), params.to_vec())?;
        let all: Vec<usize> = (0..self.examples.len()).collect();
        batch_loss_and_grad(&model, self.examples, &all, Exec::Serial)
    }
}

/// Checks the gradient of the mean cross-entropy over `examples` with respect
/// to every block of `model` against central differences.
pub fn check_classifier_gradient(
    model: &TinyClassifier,
    examples: &[EncodedExample],
    epsilon: f64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let obj = ClassifierObjective {
        template: model,
        examples,
    };
    grad_check(&obj, model.blocks(), epsilon, opts)
}
