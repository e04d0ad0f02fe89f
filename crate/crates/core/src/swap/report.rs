use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentPlan, Variant};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
pub const BASELINE: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapRow {
    pub variant: Variant,
    pub budget: String,
    pub seed: u64,
    pub model_dataset: String,
    pub eval_dataset: String,
    /// Block that was exchanged, or `"none"` for the unswapped baseline.
    pub swapped_module: String,
    /// Dataset of the model the block came from; empty for baselines.
    pub partner_dataset: String,
    pub accuracy: f64,
    pub mean_loss: f64,
}

impl SwapRow {
    fn key(&self) -> (Variant, &str, u64, &str, &str) {
        (
            self.variant,
            &self.budget,
            self.seed,
            &self.model_dataset,
            &self.eval_dataset,
        )
    }

    pub fn is_baseline(&self) -> bool {
        self.swapped_module == BASELINE
    }
}

/// Rows carry no timestamps so reruns of a plan produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapReport {
    pub format_version: u32,
    pub plan: ExperimentPlan,
    pub rows: Vec<SwapRow>,
}

impl SwapReport {
    fn baseline_for(&self, row: &SwapRow) -> Option<&SwapRow> {
        self.rows.iter().find(|b| b.is_baseline() && b.key() == row.key())
    }

    /// Every swapped row must have a baseline with the same coordinates.
    pub fn check_baselines(&self) -> Result<()> {
        for r in self.rows.iter().filter(|r| !r.is_baseline()) {
            if self.baseline_for(r).is_none() {
                return Err(Error::Contract(format!(
                    "no baseline for {} {} seed {} model {} eval {}",
                    r.variant.as_str(),
                    r.budget,
                    r.seed,
                    r.model_dataset,
                    r.eval_dataset
                )));
            }
        }
        Ok(())
    }
}

/// Seed-averaged baseline and swapped accuracy per
/// (variant, budget, module, model, evaluation set).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub variant: Variant,
    pub budget: String,
    pub module: String,
    pub model_dataset: String,
    pub eval_dataset: String,
    pub n_seeds: usize,
    pub baseline_accuracy: f64,
    pub swapped_accuracy: f64,
    /// `baseline_accuracy − swapped_accuracy`
    pub delta_accuracy: f64,
}

pub fn plot_rows(report: &SwapReport) -> Vec<PlotRow> {
    let mut out: Vec<(PlotRow, f64, f64)> = Vec::new();
    for r in report.rows.iter().filter(|r| !r.is_baseline()) {
        let Some(base) = report.baseline_for(r) else { continue };
        let pos = out.iter().position(|(p, _, _)| {
            p.variant == r.variant
                && p.budget == r.budget
                && p.module == r.swapped_module
                && p.model_dataset == r.model_dataset
                && p.eval_dataset == r.eval_dataset
        });
        let entry = match pos {
            Some(i) => &mut out[i],
            None => {
                out.push((
                    PlotRow {
                        variant: r.variant,
                        budget: r.budget.clone(),
                        module: r.swapped_module.clone(),
                        model_dataset: r.model_dataset.clone(),
                        eval_dataset: r.eval_dataset.clone(),
                        n_seeds: 0,
                        baseline_accuracy: 0.0,
                        swapped_accuracy: 0.0,
                        delta_accuracy: 0.0,
                    },
                    0.0,
                    0.0,
                ));
                out.last_mut().expect("just pushed")
            }
        };
        entry.0.n_seeds += 1;
        entry.1 += base.accuracy;
        entry.2 += r.accuracy;
    }
    out.into_iter()
        .map(|(mut p, base, swapped)| {
            let n = p.n_seeds as f64;
            p.baseline_accuracy = base / n;
            p.swapped_accuracy = swapped / n;
            p.delta_accuracy = p.baseline_accuracy - p.swapped_accuracy;
            p
        })
        .collect()
}

/// Mean accuracy drop over every seed, budget and model of `variant` after
/// swapping `module`, counting only evaluations on each model's own test set.
pub fn mean_delta(report: &SwapReport, variant: Variant, module: &str) -> Option<f64> {
    let deltas: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.variant == variant && r.swapped_module == module && r.model_dataset == r.eval_dataset)
        .filter_map(|r| report.baseline_for(r).map(|b| b.accuracy - r.accuracy))
        .collect();
    if deltas.is_empty() {
        None
    } else {
        Some(deltas.iter().sum::<f64>() / deltas.len() as f64)
    }
}

fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn report_csv(report: &SwapReport) -> Vec<u8> {
    to_csv(
        &[
            "variant",
            "budget",
            "seed",
            "model_dataset",
            "eval_dataset",
            "swapped_module",
            "partner_dataset",
            "accuracy",
            "mean_loss",
        ],
        &report.rows,
    )
}

fn plot_csv(report: &SwapReport) -> Vec<u8> {
    to_csv(
        &[
            "variant",
            "budget",
            "module",
            "model_dataset",
            "eval_dataset",
            "n_seeds",
            "baseline_accuracy",
            "swapped_accuracy",
            "delta_accuracy",
        ],
        &plot_rows(report),
    )
}

/// Writes `report.json`, `report.csv` and `plot.csv` into `dir`.
pub fn emit_report(report: &SwapReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| Error::json("serializing report", e))?;
    let files = [
        ("report.json", json),
        ("report.csv", report_csv(report)),
        ("plot.csv", plot_csv(report)),
    ];
    let mut paths = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_report(path: &Path) -> Result<SwapReport> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))
}
