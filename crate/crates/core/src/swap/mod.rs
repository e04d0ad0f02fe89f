//! Block swaps between trained classifiers and the experiment driver that
//! measures their effect.

mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate_encoded, encode_dataset, fit, ClassifierConfig, EncodedExample, TinyClassifier, Tokenizer, EMBEDDING};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{
    build_feature_matrix, filter_vocabulary, read_feature_file, read_vocab, FeatureRecord, FeatureSchema,
    DEFAULT_SPECIAL_PATTERNS,
};
use crate::grounding::{import_embedding, train_grounding, GroundedEmbedding, GroundingConfig};
use crate::io::{load_dataset, Dataset};
use crate::rng;

pub use report::{
    emit_report, mean_delta, plot_rows, read_report, report_csv, PlotRow, SwapReport, SwapRow, BASELINE, REPORT_VERSION,
};

/// Returns copies of `a` and `b` with block `name` exchanged.
pub fn swap_module(a: &TinyClassifier, b: &TinyClassifier, name: &str) -> Result<(TinyClassifier, TinyClassifier)> {
    let block_a = a.block(name)?;
    let block_b = b.block(name)?;
    if block_a.shape() != block_b.shape() {
        return Err(Error::Dimension {
            op: "swap_module",
            lhs: block_a.shape(),
            rhs: block_b.shape(),
        });
    }
    let mut a2 = a.clone();
    let mut b2 = b.clone();
    a2.set_block(name, block_b.clone())?;
    b2.set_block(name, block_a.clone())?;
    Ok((a2, b2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Both models start from one shared grounded embedding.
    Grounded,
    /// Each model starts from its own random embedding.
    Standard,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Grounded => "grounded",
            Variant::Standard => "standard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub train: PathBuf,
    pub test: PathBuf,
    /// `epochs` and `seed` are overridden per budget and cell.
    pub classifier: ClassifierConfig,
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Grounded, Variant::Standard]
}

fn default_budgets() -> BTreeMap<String, usize> {
    BTreeMap::from([("base".to_string(), 10)])
}

fn default_swap() -> Vec<String> {
    vec![EMBEDDING.to_string()]
}

fn default_train_cap() -> usize {
    2000
}

fn default_test_cap() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub vocab: PathBuf,
    pub features: PathBuf,
    /// Pretrained embedding shared by every grounded cell. When absent, one
    /// is trained per seed from `grounding`.
    #[serde(default)]
    pub embedding: Option<PathBuf>,
    #[serde(default)]
    pub grounding: GroundingConfig,
    /// Exactly two datasets; their models form the swap pair.
    pub datasets: Vec<DatasetSpec>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Budget name to epoch count.
    #[serde(default = "default_budgets")]
    pub budgets: BTreeMap<String, usize>,
    #[serde(default = "default_swap")]
    pub swap: Vec<String>,
    pub seeds: Vec<u64>,
    /// Name of a dataset whose test split every compatible model is also
    /// evaluated on.
    #[serde(default)]
    pub fixed_eval: Option<String>,
    #[serde(default = "default_train_cap")]
    pub train_cap: usize,
    #[serde(default = "default_test_cap")]
    pub test_cap: usize,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.datasets.len() != 2 {
            return fail(format!("a plan needs exactly two datasets, got {}", self.datasets.len()));
        }
        if self.datasets[0].name == self.datasets[1].name {
            return fail("dataset names must differ".into());
        }
        if self.seeds.is_empty() || self.variants.is_empty() || self.budgets.is_empty() {
            return fail("seeds, variants and budgets must be non-empty".into());
        }
        for d in &self.datasets {
            d.classifier.validate()?;
            if d.classifier.dim != self.datasets[0].classifier.dim {
                return fail("both classifiers must share one embedding dimension".into());
            }
        }
        if let Some(f) = &self.fixed_eval {
            if !self.datasets.iter().any(|d| &d.name == f) {
                return fail(format!("fixed_eval names unknown dataset {f:?}"));
            }
        }
        if self.variants.contains(&Variant::Grounded) && self.embedding.is_none() {
            self.grounding.validate()?;
            if self.grounding.dim != self.datasets[0].classifier.dim {
                return fail(format!(
                    "grounding dim {} differs from classifier dim {}",
                    self.grounding.dim, self.datasets[0].classifier.dim
                ));
            }
        }
        Ok(())
    }

    /// Reads a plan, resolving relative paths against the plan's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut plan.vocab);
        fix(&mut plan.features);
        if let Some(e) = plan.embedding.as_mut() {
            fix(e);
        }
        for d in &mut plan.datasets {
            fix(&mut d.train);
            fix(&mut d.test);
        }
        Ok(plan)
    }
}

/// Everything a plan refers to, already loaded.
#[derive(Debug, Clone)]
pub struct ExperimentInputs {
    pub vocab: Vec<String>,
    pub features: Vec<FeatureRecord>,
    pub fingerprint: String,
    pub embedding: Option<GroundedEmbedding>,
    /// (train, test) per plan dataset, in plan order.
    pub splits: Vec<(Dataset, Dataset)>,
}

pub fn load_inputs(plan: &ExperimentPlan) -> Result<ExperimentInputs> {
    let vocab = read_vocab(&plan.vocab)?;
    let (features, fingerprint) = read_feature_file(&plan.features)?;
    let embedding = match &plan.embedding {
        Some(p) => Some(import_embedding(p, Some(plan.datasets[0].classifier.dim))?),
        None => None,
    };
    let mut splits = Vec::with_capacity(plan.datasets.len());
    for d in &plan.datasets {
        splits.push((load_dataset(&d.train)?, load_dataset(&d.test)?));
    }
    Ok(ExperimentInputs {
        vocab,
        features,
        fingerprint,
        embedding,
        splits,
    })
}

struct Prepared {
    name: String,
    cfg: ClassifierConfig,
    train: Vec<EncodedExample>,
    test: Vec<EncodedExample>,
}

#[derive(Debug, Clone, Copy)]
struct Cell<'a> {
    variant: Variant,
    budget: &'a str,
    epochs: usize,
    seed: u64,
}

impl Cell<'_> {
    fn label(&self) -> String {
        format!("variant={} budget={} seed={}", self.variant.as_str(), self.budget, self.seed)
    }
}

fn ground_for_seed(plan: &ExperimentPlan, inputs: &ExperimentInputs, seed: u64) -> Result<GroundedEmbedding> {
    if let Some(e) = &inputs.embedding {
        return Ok(e.clone());
    }
    let filtered = filter_vocabulary(&inputs.vocab, &DEFAULT_SPECIAL_PATTERNS);
    let fm = build_feature_matrix(&inputs.features, &filtered, &FeatureSchema)?;
    let cfg = GroundingConfig {
        seed,
        ..plan.grounding.clone()
    };
    Ok(train_grounding(&cfg, &fm, &filtered, &inputs.fingerprint)?.0)
}

/// Trains the model pair for every (variant, budget, seed) cell, evaluates
/// baselines, applies each swap and re-evaluates. Cells may run in parallel;
/// rows are always assembled in plan order.
pub fn run_swap_experiment(plan: &ExperimentPlan, inputs: &ExperimentInputs, exec: Exec) -> Result<SwapReport> {
    plan.validate()?;
    if inputs.splits.len() != plan.datasets.len() {
        return Err(Error::Contract("inputs do not match the plan's datasets".into()));
    }
    let max_len = plan.datasets.iter().map(|d| d.classifier.max_len).min().unwrap_or(1);
    let tok = Tokenizer::new(&inputs.vocab, max_len)?;

    let mut prepared = Vec::with_capacity(plan.datasets.len());
    for (spec, (train, test)) in plan.datasets.iter().zip(&inputs.splits) {
        let train = train.stratified_cap(plan.train_cap, rng::label("train-cap"));
        let test = test.stratified_cap(plan.test_cap, rng::label("test-cap"));
        let c = spec.classifier.n_classes;
        train.check_labels(c)?;
        test.check_labels(c)?;
        if test.is_empty() {
            return Err(Error::Data {
                line: 1,
                reason: format!("test split of {:?} is empty", spec.name),
            });
        }
        prepared.push(Prepared {
            name: spec.name.clone(),
            cfg: spec.classifier.clone(),
            train: encode_dataset(&train, &tok),
            test: encode_dataset(&test, &tok),
        });
    }
    let fixed = plan
        .fixed_eval
        .as_ref()
        .and_then(|f| prepared.iter().position(|p| &p.name == f));

    let grounded: Vec<Option<GroundedEmbedding>> = if plan.variants.contains(&Variant::Grounded) {
        exec.map(&plan.seeds, |&s| ground_for_seed(plan, inputs, s).map(Some))
            .into_iter()
            .zip(&plan.seeds)
            .map(|(r, s)| {
                r.map_err(|e| Error::Experiment {
                    cell: format!("grounding seed={s}"),
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; plan.seeds.len()]
    };

    let mut cells = Vec::new();
    for &variant in &plan.variants {
        for (budget, &epochs) in &plan.budgets {
            for (si, &seed) in plan.seeds.iter().enumerate() {
                cells.push((si, Cell {
                    variant,
                    budget,
                    epochs,
                    seed,
                }));
            }
        }
    }

    let results = exec.map(&cells, |(si, cell)| {
        run_cell(plan, &prepared, fixed, *cell, grounded[*si].as_ref(), tok.vocab_size()).map_err(|e| {
            Error::Experiment {
                cell: cell.label(),
                source: Box::new(e),
            }
        })
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(SwapReport {
        format_version: REPORT_VERSION,
        plan: plan.clone(),
        rows,
    })
}

fn run_cell(
    plan: &ExperimentPlan,
    prepared: &[Prepared],
    fixed: Option<usize>,
    cell: Cell<'_>,
    grounded: Option<&GroundedEmbedding>,
    vocab_size: usize,
) -> Result<Vec<SwapRow>> {
    let mut models = Vec::with_capacity(prepared.len());
    for (i, p) in prepared.iter().enumerate() {
        let cfg = ClassifierConfig {
            epochs: cell.epochs,
            seed: rng::derive_seed(cell.seed, &[rng::label("pair-member"), i as u64]),
            ..p.cfg.clone()
        };
        let embedding = match cell.variant {
            Variant::Grounded => {
                let g = grounded.ok_or_else(|| Error::Contract("grounded cell without embedding".into()))?;
                Some(&g.embedding)
            }
            Variant::Standard => None,
        };
        let model = TinyClassifier::new(cfg, vocab_size, embedding)?;
        let (model, _) = fit(model, &p.train, None, Exec::Serial)?;
        models.push(model);
    }

    let mut rows = Vec::new();
    evaluate_pair(&mut rows, prepared, fixed, &cell, &models, "none")?;
    for module in &plan.swap {
        let (a, b) = swap_module(&models[0], &models[1], module)?;
        evaluate_pair(&mut rows, prepared, fixed, &cell, &[a, b], module)?;
    }
    Ok(rows)
}

/// Each model on its own test split, plus the fixed evaluation split when its
/// labels fit the model's head.
fn evaluate_pair(
    rows: &mut Vec<SwapRow>,
    prepared: &[Prepared],
    fixed: Option<usize>,
    cell: &Cell<'_>,
    models: &[TinyClassifier],
    module: &str,
) -> Result<()> {
    for (i, m) in models.iter().enumerate() {
        let mut targets = vec![i];
        if let Some(f) = fixed {
            if f != i && prepared[f].test.iter().all(|e| e.label < m.n_classes()) {
                targets.push(f);
            }
        }
        for t in targets {
            let r = evaluate_encoded(m, &prepared[t].test, Exec::Serial)?;
            rows.push(SwapRow {
                variant: cell.variant,
                budget: cell.budget.to_string(),
                seed: cell.seed,
                model_dataset: prepared[i].name.clone(),
                eval_dataset: prepared[t].name.clone(),
                swapped_module: module.to_string(),
                partner_dataset: if module == "none" {
                    String::new()
                } else {
                    prepared[1 - i].name.clone()
                },
                accuracy: r.accuracy,
                mean_loss: r.mean_loss,
            });
        }
    }
    Ok(())
}
