use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};
use crate::rng;

use rand::Rng;

pub const EMBEDDING: &str = "embedding";
pub const HEAD: &str = "head";
const ENCODER_PARTS: [&str; 8] = ["wq", "wk", "wv", "wo", "ffn1", "ffn2", "ln1", "ln2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub n_blocks: usize,
    pub ffn_mult: usize,
    pub n_classes: usize,
    pub max_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub freeze_embedding: bool,
    pub layer_norm_eps: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_blocks: 1,
            ffn_mult: 4,
            n_classes: 2,
            max_len: 64,
            lr: 1e-3,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            freeze_embedding: false,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_classes < 2 {
            return fail(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return fail(format!("dim must be even and positive, got {}", self.dim));
        }
        if self.ffn_mult == 0 || self.max_len == 0 || self.batch_size == 0 {
            return fail("ffn_mult, max_len and batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.layer_norm_eps.is_finite() && self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        self.dim * self.ffn_mult
    }
}

/// `table[p][2i] = sin(p / 10000^(2i/d))`, `table[p][2i+1] = cos(...)`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Matrix {
    Matrix::from_fn(len, dim, |p, c| {
        let i = (c / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / dim as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Token ids for a batch, padded to a common width.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Matrix,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn new(sequences: &[Vec<usize>], pad: usize) -> Self {
        let width = sequences.iter().map(Vec::len).max().unwrap_or(0);
        let ids = Matrix::from_fn(sequences.len(), width, |r, c| {
            sequences[r].get(c).copied().unwrap_or(pad) as f64
        });
        Self {
            ids,
            lengths: sequences.iter().map(Vec::len).collect(),
        }
    }

    pub fn sequence(&self, r: usize) -> Vec<usize> {
        self.ids.row(r)[..self.lengths[r]].iter().map(|&x| x as usize).collect()
    }
}

/// Transformer-style encoder classifier whose parameters live in named blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyClassifier {
    config: ClassifierConfig,
    vocab_size: usize,
    names: Vec<String>,
    blocks: Vec<Matrix>,
    positions: Matrix,
}

pub(crate) fn block_layout(cfg: &ClassifierConfig, vocab_size: usize) -> Vec<(String, (usize, usize))> {
    let d = cfg.dim;
    let h = cfg.hidden();
    let mut out = vec![(EMBEDDING.to_string(), (vocab_size, d))];
    for i in 0..cfg.n_blocks {
        for part in ENCODER_PARTS {
            let shape = match part {
                "ffn1" => (d, h),
                "ffn2" => (h, d),
                "ln1" | "ln2" => (2, d),
                _ => (d, d),
            };
            out.push((format!("encoder.{i}.{part}"), shape));
        }
    }
    out.push((HEAD.to_string(), (d + 1, cfg.n_classes)));
    out
}

fn init_block(name: &str, rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng::stream(seed, &[rng::label("classifier-init"), rng::label(name)]);
    let uniform = |fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        move |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(-bound..=bound)
    };
    if name.ends_with(".ln1") || name.ends_with(".ln2") {
        Matrix::from_fn(rows, cols, |r, _| if r == 0 { 1.0 } else { 0.0 })
    } else if name == HEAD {
        let draw = uniform(rows - 1);
        Matrix::from_fn(rows, cols, |r, _| if r + 1 == rows { 0.0 } else { draw(&mut rng) })
    } else if name == EMBEDDING {
        let draw = uniform(cols);
        Matrix::from_fn(rows, cols, |_, _| draw(&mut rng))
    } else {
        let draw = uniform(rows);
        Matrix::from_fn(rows, cols, |_, _| draw(&mut rng))
    }
}

/// Per-block gradients for one example. The embedding gradient is kept
/// sparse: one row per token position.
pub(crate) struct ExampleGrad {
    pub loss: f64,
    pub token_rows: Vec<usize>,
    pub token_grad: Matrix,
    pub dense: Vec<Matrix>,
}

impl TinyClassifier {
    /// Fresh model. `embedding`, when given, replaces the random
    /// initialization of the embedding block.
    pub fn new(cfg: ClassifierConfig, vocab_size: usize, embedding: Option<&Matrix>) -> Result<Self> {
        cfg.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        if let Some(e) = embedding {
            if e.cols() != cfg.dim {
                return Err(Error::Config(format!(
                    "embedding has dimension {}, classifier expects {}",
                    e.cols(),
                    cfg.dim
                )));
            }
            if e.rows() != vocab_size {
                return Err(Error::Config(format!(
                    "embedding has {} rows, vocabulary has {vocab_size} tokens",
                    e.rows()
                )));
            }
        }
        let layout = block_layout(&cfg, vocab_size);
        let mut names = Vec::with_capacity(layout.len());
        let mut blocks = Vec::with_capacity(layout.len());
        for (name, (r, c)) in layout {
            let m = match embedding {
                Some(e) if name == EMBEDDING => e.clone(),
                _ => init_block(&name, r, c, cfg.seed),
            };
            names.push(name);
            blocks.push(m);
        }
        let positions = sinusoidal_positions(cfg.max_len, cfg.dim);
        Ok(Self {
            config: cfg,
            vocab_size,
            names,
            blocks,
            positions,
        })
    }

    pub(crate) fn from_parts(cfg: ClassifierConfig, vocab_size: usize, blocks: Vec<Matrix>) -> Result<Self> {
        cfg.validate()?;
        let layout = block_layout(&cfg, vocab_size);
        if layout.len() != blocks.len() {
            return Err(Error::Contract(format!("expected {} blocks, got {}", layout.len(), blocks.len())));
        }
        for ((_, shape), m) in layout.iter().zip(&blocks) {
            if *shape != m.shape() {
                return Err(Error::Dimension {
                    op: "classifier blocks",
                    lhs: m.shape(),
                    rhs: *shape,
                });
            }
        }
        let positions = sinusoidal_positions(cfg.max_len, cfg.dim);
        Ok(Self {
            names: layout.into_iter().map(|(n, _)| n).collect(),
            config: cfg,
            vocab_size,
            blocks,
            positions,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn block_names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [Matrix] {
        &mut self.blocks
    }

    pub fn n_parameters(&self) -> usize {
        self.blocks.iter().map(Matrix::len).sum()
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownBlock {
                name: name.to_string(),
                valid: self.names.clone(),
            })
    }

    pub fn block(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.blocks[self.position(name)?])
    }

    /// Replaces a block with a matrix of the same shape.
    pub fn set_block(&mut self, name: &str, value: Matrix) -> Result<()> {
        let i = self.position(name)?;
        if self.blocks[i].shape() != value.shape() {
            return Err(Error::Dimension {
                op: "set_block",
                lhs: value.shape(),
                rhs: self.blocks[i].shape(),
            });
        }
        self.blocks[i] = value;
        Ok(())
    }

    fn check_sequence(&self, ids: &[usize]) -> Result<()> {
        if ids.len() > self.config.max_len {
            return Err(Error::Contract(format!(
                "sequence length {} exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Contract(format!(
                "token index {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Records the forward pass for one sequence. `vars` holds one leaf per
    /// block (the embedding entry is unused) and `tokens` is the gathered
    /// embedding rows. Returns the 1×C logits.
    fn record<'a>(&'a self, tape: &mut Tape<'a>, vars: &[Var], tokens: Option<Var>) -> Result<Var> {
        let d = self.config.dim;
        let eps = self.config.layer_norm_eps;
        let head = vars[vars.len() - 1];
        let head_w = tape.gather_rows(head, &(0..d).collect::<Vec<_>>())?;
        let head_b = tape.gather_rows(head, &[d])?;

        let pooled = match tokens {
            None => tape.constant_owned(Matrix::zeros(1, d)),
            Some(tokens) => {
                let len = tape.value(tokens).rows();
                let pos = tape.constant_owned(self.positions.gather_rows(&(0..len).collect::<Vec<_>>())?);
                let mut x = tape.add(tokens, pos)?;
                let scale = 1.0 / (d as f64).sqrt();
                for b in 0..self.config.n_blocks {
                    let p = &vars[1 + b * ENCODER_PARTS.len()..1 + (b + 1) * ENCODER_PARTS.len()];
                    let (wq, wk, wv, wo, f1, f2, ln1, ln2) = (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);
                    let q = tape.matmul(x, wq)?;
                    let k = tape.matmul(x, wk)?;
                    let v = tape.matmul(x, wv)?;
                    let scores = tape.matmul_t(q, k)?;
                    let scores = tape.scale(scores, scale);
                    let attn = tape.softmax_rows(scores);
                    let mixed = tape.matmul(attn, v)?;
                    let out = tape.matmul(mixed, wo)?;
                    let res = tape.add(x, out)?;
                    let x1 = layer_norm(tape, res, ln1, eps)?;
                    let h = tape.matmul(x1, f1)?;
                    let h = tape.relu(h);
                    let h = tape.matmul(h, f2)?;
                    let res = tape.add(x1, h)?;
                    x = layer_norm(tape, res, ln2, eps)?;
                }
                tape.mean_rows(x)?
            }
        };
        let logits = tape.matmul(pooled, head_w)?;
        tape.add_row(logits, head_b)
    }

    /// Logits for one token sequence.
    pub fn logits(&self, ids: &[usize]) -> Result<Vec<f64>> {
        self.check_sequence(ids)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.blocks.iter().map(|b| tape.constant(b)).collect();
        let tokens = if ids.is_empty() {
            None
        } else {
            Some(tape.constant_owned(self.blocks[0].gather_rows(ids)?))
        };
        let out = self.record(&mut tape, &vars, tokens)?;
        Ok(tape.value(out).as_slice().to_vec())
    }

    /// Batch × C logits. Positions at or beyond each row's length are never read.
    pub fn forward(&self, batch: &PaddedBatch) -> Result<Matrix> {
        let n = batch.lengths.len();
        if batch.ids.rows() != n {
            return Err(Error::Dimension {
                op: "forward",
                lhs: batch.ids.shape(),
                rhs: (n, batch.ids.cols()),
            });
        }
        let mut out = Matrix::zeros(n, self.n_classes());
        for r in 0..n {
            if batch.lengths[r] > batch.ids.cols() {
                return Err(Error::Contract(format!(
                    "length {} exceeds padded width {}",
                    batch.lengths[r],
                    batch.ids.cols()
                )));
            }
            let row = self.logits(&batch.sequence(r))?;
            out.row_mut(r).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Cross-entropy and full gradient for one labelled sequence.
    pub(crate) fn example_grad(&self, ids: &[usize], label: usize) -> Result<ExampleGrad> {
        self.check_sequence(ids)?;
        let gathered = self.blocks[0].gather_rows(ids)?;
        let mut tape = Tape::new();
        let mut vars: Vec<Var> = Vec::with_capacity(self.blocks.len());
        vars.push(tape.constant(&self.blocks[0]));
        for b in &self.blocks[1..] {
            vars.push(tape.param(b));
        }
        let tokens = if ids.is_empty() { None } else { Some(tape.param(&gathered)) };
        let logits = self.record(&mut tape, &vars, tokens)?;
        let loss = tape.cross_entropy(logits, &[label])?;
        let grads = tape.backward(loss)?;
        let mut dense = Vec::with_capacity(self.blocks.len() - 1);
        for &v in &vars[1..] {
            dense.push(grads.get(v).cloned().unwrap_or_else(|| Matrix::zeros(0, 0)));
        }
        let token_grad = match tokens {
            Some(t) => grads.get(t).cloned().unwrap_or_else(|| Matrix::zeros(0, self.config.dim)),
            None => Matrix::zeros(0, self.config.dim),
        };
        Ok(ExampleGrad {
            loss: tape.scalar(loss),
            token_rows: ids.to_vec(),
            token_grad,
            dense,
        })
    }
}

fn layer_norm(tape: &mut Tape<'_>, x: Var, params: Var, eps: f64) -> Result<Var> {
    let gain = tape.gather_rows(params, &[0])?;
    let bias = tape.gather_rows(params, &[1])?;
    let z = tape.standardize_rows(x, eps);
    let z = tape.mul_row(z, gain)?;
    tape.add_row(z, bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_classes: usize) -> TinyClassifier {
        let cfg = ClassifierConfig {
            dim: 8,
            n_classes,
            max_len: 16,
            seed: 3,
            ..Default::default()
        };
        TinyClassifier::new(cfg, 20, None).unwrap()
    }

    #[test]
    fn block_names_are_stable() {
        let m = small(3);
        let names: Vec<&str> = m.block_names().iter().map(String::as_str).collect();
        assert_eq!(
            names,
            [
                "embedding",
                "encoder.0.wq",
                "encoder.0.wk",
                "encoder.0.wv",
                "encoder.0.wo",
                "encoder.0.ffn1",
                "encoder.0.ffn2",
                "encoder.0.ln1",
                "encoder.0.ln2",
                "head"
            ]
        );
        assert_eq!(m.block("head").unwrap().shape(), (9, 3));
        assert_eq!(m.block("encoder.0.ffn1").unwrap().shape(), (8, 32));
        assert!(matches!(m.block("encoder.9.wq"), Err(Error::UnknownBlock { .. })));
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut ClassifierConfig)| {
            let mut c = ClassifierConfig::default();
            f(&mut c);
            matches!(c.validate(), Err(Error::Config(_)))
        };
        assert!(bad(|c| c.n_classes = 1));
        assert!(bad(|c| c.dim = 7));
        assert!(bad(|c| c.batch_size = 0));
        assert!(ClassifierConfig::default().validate().is_ok());
    }

    #[test]
    fn embedding_shape_checked() {
        let cfg = ClassifierConfig { dim: 8, ..Default::default() };
        let wrong_dim = Matrix::zeros(20, 6);
        assert!(matches!(TinyClassifier::new(cfg.clone(), 20, Some(&wrong_dim)), Err(Error::Config(_))));
        let e = Matrix::filled(20, 8, 0.25);
        let m = TinyClassifier::new(cfg, 20, Some(&e)).unwrap();
        assert_eq!(m.block(EMBEDDING).unwrap(), &e);
    }

    #[test]
    fn identical_rows_identical_logits() {
        let m = small(4);
        let batch = PaddedBatch::new(&[vec![1, 2, 3], vec![1, 2, 3]], 0);
        let out = m.forward(&batch).unwrap();
        assert_eq!(out.shape(), (2, 4));
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn padding_is_never_read() {
        let m = small(3);
        let mut batch = PaddedBatch::new(&[vec![4, 5], vec![6, 7, 8, 9]], 0);
        let before = m.forward(&batch).unwrap();
        batch.ids.set(0, 2, 19.0);
        batch.ids.set(0, 3, 11.0);
        assert_eq!(m.forward(&batch).unwrap(), before);
    }

    #[test]
    fn empty_sequence_uses_head_bias() {
        let m = small(3);
        let head = m.block(HEAD).unwrap();
        assert_eq!(m.logits(&[]).unwrap(), head.row(8).to_vec());
    }

    #[test]
    fn out_of_range_token_is_a_contract_error() {
        let m = small(3);
        assert!(matches!(m.logits(&[20]), Err(Error::Contract(_))));
        assert!(matches!(m.logits(&[0; 17]), Err(Error::Contract(_))));
    }

    #[test]
    fn positions_table() {
        let p = sinusoidal_positions(3, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((p.get(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((p.get(2, 3) - (2.0f64 / 100.0).cos()).abs() < 1e-15);
    }
}
