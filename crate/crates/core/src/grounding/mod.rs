//! Feature grounding: trains an embedding matrix so that each kept token's
//! saturation-projected embedding reconstructs its feature vector, while a
//! pairwise contrastive term with min/max distance hinges shapes distances
//! between raw embeddings.

mod format;
pub mod loss;
mod metrics;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FilteredVocab};
use crate::numerics::{AdamParams, AdamState, Matrix, Tape};
use crate::rng;
use crate::saturation::{base_projector, OperatorBank, SaturationOperator, DEFAULT_LOWER, DEFAULT_UPPER};

pub use format::{export_embedding, import_embedding, read_embedding, write_embedding, FingerprintCheck};
pub use loss::{contrastive_loss, pair_label, reconstruction_loss, Pair};
pub use metrics::{metrics_csv, EpochMetrics, HIST_BINS, HIST_MAX, HIST_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundingConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Projected dimension; must equal the feature width.
    pub feature_dim: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub batch_tokens: usize,
    pub margin: f64,
    pub sim_threshold: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub lambda_contrastive: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Defaults to `4 × batch_tokens` when absent.
    pub pairs_per_batch: Option<usize>,
    pub projector_lower: f64,
    pub projector_upper: f64,
    pub seed: u64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            feature_dim: 39,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 100,
            batch_tokens: 256,
            margin: 1.0,
            sim_threshold: 0.8,
            d_min: 0.05,
            d_max: 10.0,
            lambda_contrastive: 1.0,
            lambda_min: 1.0,
            lambda_max: 1.0,
            pairs_per_batch: None,
            projector_lower: DEFAULT_LOWER,
            projector_upper: DEFAULT_UPPER,
            seed: 0,
        }
    }
}

impl GroundingConfig {
    pub fn pairs_per_batch(&self) -> usize {
        self.pairs_per_batch.unwrap_or(4 * self.batch_tokens)
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 || self.feature_dim == 0 {
            return bad("dim and feature_dim must be at least 1");
        }
        if self.batch_tokens == 0 {
            return bad("batch_tokens must be at least 1");
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return bad("require 0 < d_min < d_max");
        }
        if self.margin <= 0.0 {
            return bad("margin must be positive");
        }
        if !(0.0..=1.0).contains(&self.sim_threshold) {
            return bad("sim_threshold must lie in [0, 1]");
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return bad("lr must be finite and non-negative");
        }
        Ok(())
    }
}

/// `d` entries i.i.d. uniform on `[−1/√d, 1/√d]`.
pub fn init_embedding(rows: usize, dim: usize, seed: u64) -> Matrix {
    let bound = 1.0 / (dim as f64).sqrt();
    let mut r = rng::stream(seed, &[rng::label("embedding-init")]);
    Matrix::from_fn(rows, dim, |_, _| r.random_range(-bound..=bound))
}

/// Loss breakdown of one optimizer step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub recon: f64,
    pub contrastive: f64,
}

/// Trainable state: the full embedding (kept and excluded rows) and the
/// optimizer moments.
#[derive(Debug, Clone)]
pub struct GroundingState {
    pub embedding: Matrix,
    pub kept_mask: Vec<bool>,
    pub adam: AdamState,
    pub epoch: usize,
}

impl GroundingState {
    pub fn new(embedding: Matrix, kept_mask: Vec<bool>, adam: AdamParams) -> Self {
        let shape = embedding.shape();
        Self {
            embedding,
            kept_mask,
            adam: AdamState::new(adam, &[shape]),
            epoch: 0,
        }
    }
}

/// Builds the total loss graph and returns `(losses, ∂L/∂E)`.
///
/// `batch` holds positions into the kept-token list (rows of `features`,
/// entries of `bank`); `kept` maps those positions to vocabulary indices.
pub fn loss_and_grad(
    embedding: &Matrix,
    batch: &[usize],
    pairs: &[Pair],
    features: &FeatureMatrix,
    bank: &OperatorBank,
    cfg: &GroundingConfig,
) -> Result<(StepLosses, Matrix)> {
    let rows: Vec<usize> = batch.iter().map(|&k| features.kept_indices[k]).collect();
    let ops: Vec<&SaturationOperator> = batch.iter().map(|&k| bank.get(k)).collect();
    let targets = features.x.gather_rows(batch)?;

    let mut tape = Tape::new();
    let e = tape.param(embedding);
    let recon = loss::record_reconstruction(&mut tape, e, &rows, &ops, &targets)?;
    let contrastive = loss::record_contrastive(&mut tape, e, pairs, cfg)?;
    let weighted = tape.scale(contrastive, cfg.lambda_contrastive);
    let total = tape.add(recon, weighted)?;
    let grads = tape.backward(total)?;
    let losses = StepLosses {
        total: tape.scalar(total),
        recon: tape.scalar(recon),
        contrastive: tape.scalar(contrastive),
    };
    Ok((losses, grads.into_vec().remove(0)))
}

/// One optimizer step on `L = L_recon + λ·L_contrastive`. Excluded rows are
/// never written.
pub fn grounding_step(
    state: &mut GroundingState,
    batch: &[usize],
    pairs: &[Pair],
    features: &FeatureMatrix,
    bank: &OperatorBank,
    cfg: &GroundingConfig,
    batch_index: usize,
) -> Result<StepLosses> {
    let (losses, grad) = loss_and_grad(&state.embedding, batch, pairs, features, bank, cfg)?;
    let diverged = |reason: &str| Error::Divergence {
        epoch: state.epoch,
        batch: batch_index,
        reason: reason.to_string(),
    };
    if !losses.total.is_finite() {
        return Err(diverged("non-finite loss"));
    }
    if !grad.is_finite() {
        return Err(diverged("non-finite gradient"));
    }
    let mask = state.kept_mask.clone();
    state
        .adam
        .step_masked(&mut [&mut state.embedding], &[grad], Some(&[Some(&mask[..])]))?;
    if !state.embedding.is_finite() {
        return Err(diverged("non-finite embedding after update"));
    }
    Ok(losses)
}

/// Uniform pairs of distinct kept tokens, labelled by feature cosine.
pub fn sample_pairs(
    features: &FeatureMatrix,
    count: usize,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Pair>> {
    let n = features.kept_indices.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        out.push(Pair {
            i: features.kept_indices[a],
            j: features.kept_indices[b],
            similar: pair_label(features.x.row(a), features.x.row(b), tau)?,
        });
    }
    Ok(out)
}

/// Trained embedding plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedEmbedding {
    pub embedding: Matrix,
    pub feature_dim: usize,
    pub schema_sha256: String,
    /// Not stored in the embedding file; present only for in-memory results.
    pub config: Option<GroundingConfig>,
}

impl GroundedEmbedding {
    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn check_fingerprint(&self, feature_file_bytes: &[u8]) -> FingerprintCheck {
        let actual = crate::features::fingerprint(feature_file_bytes);
        if actual == self.schema_sha256 {
            FingerprintCheck::Match
        } else {
            FingerprintCheck::Mismatch {
                expected: self.schema_sha256.clone(),
                actual,
            }
        }
    }
}

/// Epoch-level driver. Holds the operator bank so callers can verify it is
/// untouched by training.
pub struct GroundingTrainer<'a> {
    cfg: GroundingConfig,
    features: &'a FeatureMatrix,
    bank: OperatorBank,
    state: GroundingState,
    fingerprint: String,
}

impl<'a> GroundingTrainer<'a> {
    pub fn new(
        cfg: GroundingConfig,
        features: &'a FeatureMatrix,
        filtered: &FilteredVocab,
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        cfg.validate()?;
        if filtered.tokens.is_empty() {
            return Err(Error::Config("no kept tokens to ground".into()));
        }
        if features.kept_indices != filtered.kept_indices() {
            return Err(Error::Contract(
                "feature matrix rows do not match the filtered vocabulary".into(),
            ));
        }
        if features.x.cols() != cfg.feature_dim {
            return Err(Error::Config(format!(
                "feature width {} does not match feature_dim {}",
                features.x.cols(),
                cfg.feature_dim
            )));
        }
        let base = base_projector(cfg.dim, cfg.feature_dim, cfg.projector_lower, cfg.projector_upper)?;
        let bank = OperatorBank::new(&base, filtered.vocab_size, &features.kept_indices)?;
        let embedding = init_embedding(filtered.vocab_size, cfg.dim, cfg.seed);
        let state = GroundingState::new(embedding, filtered.kept_mask(), cfg.adam());
        Ok(Self {
            cfg,
            features,
            bank,
            state,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn bank(&self) -> &OperatorBank {
        &self.bank
    }

    pub fn state(&self) -> &GroundingState {
        &self.state
    }

    pub fn config(&self) -> &GroundingConfig {
        &self.cfg
    }

    /// Runs one epoch: shuffle kept tokens, step through batches, then
    /// histogram the embedding.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.state.epoch;
        let seed = self.cfg.seed;
        let mut order: Vec<usize> = (0..self.features.kept_indices.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[rng::label("shuffle"), epoch as u64]));

        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for (b, batch) in order.chunks(self.cfg.batch_tokens).enumerate() {
            let mut pair_rng = rng::stream(seed, &[rng::label("pairs"), epoch as u64, b as u64]);
            let pairs = sample_pairs(
                self.features,
                self.cfg.pairs_per_batch(),
                self.cfg.sim_threshold,
                &mut pair_rng,
            )?;
            let l = grounding_step(&mut self.state, batch, &pairs, self.features, &self.bank, &self.cfg, b)?;
            sums[0] += l.total;
            sums[1] += l.recon;
            sums[2] += l.contrastive;
            batches += 1;
        }
        let n = batches as f64;
        let m = EpochMetrics::new(epoch, sums[0] / n, sums[1] / n, sums[2] / n, &self.state.embedding);
        log::debug!(
            "grounding epoch {epoch}: total {:.6} recon {:.6} contrastive {:.6}",
            m.l_total,
            m.l_recon,
            m.l_contrastive
        );
        self.state.epoch += 1;
        Ok(m)
    }

    pub fn finish(self) -> GroundedEmbedding {
        GroundedEmbedding {
            embedding: self.state.embedding,
            feature_dim: self.cfg.feature_dim,
            schema_sha256: self.fingerprint,
            config: Some(self.cfg),
        }
    }
}

/// Full grounding run: `cfg.epochs` epochs, one metrics entry per epoch.
pub fn train_grounding(
    cfg: &GroundingConfig,
    features: &FeatureMatrix,
    filtered: &FilteredVocab,
    fingerprint: &str,
) -> Result<(GroundedEmbedding, Vec<EpochMetrics>)> {
    let mut trainer = GroundingTrainer::new(cfg.clone(), features, filtered, fingerprint)?;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        metrics.push(trainer.run_epoch()?);
    }
    Ok((trainer.finish(), metrics))
}


/// Small self-contained grounding instances for gradient checks and demos.
pub mod toy {
    use rand::Rng;

    use super::*;
    use crate::features::FilteredVocab;
    use crate::numerics::{GradCheckOptions, GradCheckReport, Objective};

    pub struct ToyProblem {
        pub cfg: GroundingConfig,
        pub features: FeatureMatrix,
        pub filtered: FilteredVocab,
        pub pairs: Vec<Pair>,
        pub embedding: Matrix,
    }

    /// `tokens` kept tokens with random block-one-hot features of width
    /// `feature_dim` (blocks of three), a random embedding, and `4·tokens`
    /// sampled pairs.
    pub fn toy_problem(tokens: usize, dim: usize, feature_dim: usize, seed: u64) -> Result<ToyProblem> {
        let cfg = GroundingConfig {
            dim,
            feature_dim,
            batch_tokens: tokens,
            pairs_per_batch: Some(4 * tokens),
            seed,
            ..GroundingConfig::default()
        };
        let mut r = rng::stream(seed, &[rng::label("toy")]);
        let mut x = Matrix::zeros(tokens, feature_dim);
        for t in 0..tokens {
            for start in (0..feature_dim).step_by(3) {
                let width = 3.min(feature_dim - start);
                x.set(t, start + r.random_range(0..width), 1.0);
            }
        }
        let features = FeatureMatrix {
            x,
            kept_indices: (0..tokens).collect(),
        };
        let filtered = FilteredVocab {
            vocab_size: tokens,
            tokens: (0..tokens).map(|t| (t, format!("tok{t}"))).collect(),
            excluded: Vec::new(),
        };
        // wider than the default init so hinge terms are active on both sides
        let embedding = init_embedding(tokens, dim, seed).scale(2.0);
        let pairs = sample_pairs(&features, 4 * tokens, cfg.sim_threshold, &mut r)?;
        Ok(ToyProblem {
            cfg,
            features,
            filtered,
            pairs,
            embedding,
        })
    }

    struct ToyObjective<'a> {
        problem: &'a ToyProblem,
        bank: OperatorBank,
        batch: Vec<usize>,
    }

    impl Objective for ToyObjective<'_> {
        fn value(&self, params: &[Matrix]) -> Result<f64> {
            Ok(self.value_and_grad(params)?.0)
        }

        fn value_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
            let p = self.problem;
            let (l, g) = loss_and_grad(&params[0], &self.batch, &p.pairs, &p.features, &self.bank, &p.cfg)?;
            Ok((l.total, vec![g]))
        }
    }

    /// Checks `∂L/∂E` of the full grounding loss against central differences.
    pub fn check_gradient(problem: &ToyProblem, epsilon: f64, opts: GradCheckOptions) -> Result<GradCheckReport> {
        let cfg = &problem.cfg;
        let base = base_projector(cfg.dim, cfg.feature_dim, cfg.projector_lower, cfg.projector_upper)?;
        let obj = ToyObjective {
            problem,
            bank: OperatorBank::new(&base, problem.filtered.vocab_size, &problem.features.kept_indices)?,
            batch: (0..problem.features.kept_indices.len()).collect(),
        };
        crate::numerics::grad_check(&obj, std::slice::from_ref(&problem.embedding), epsilon, opts)
    }
}
