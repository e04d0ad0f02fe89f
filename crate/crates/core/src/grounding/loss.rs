//! Reconstruction and contrastive objectives, recorded on a [`Tape`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::GroundingConfig;
use crate::numerics::{Matrix, Tape, Var};
use crate::saturation::SaturationOperator;

/// A sampled token pair; `i` and `j` are vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub similar: bool,
}

/// Similar when the cosine of the two feature vectors reaches `tau`.
pub fn pair_label(fi: &[f64], fj: &[f64], tau: f64) -> Result<bool> {
    if fi.len() != fj.len() {
        return Err(Error::Dimension {
            op: "pair_label",
            lhs: (fi.len(), 1),
            rhs: (fj.len(), 1),
        });
    }
    let ni = fi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nj = fj.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ni == 0.0 || nj == 0.0 {
        return Err(Error::Contract("pair_label on a zero feature vector".into()));
    }
    let dot: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
    Ok(dot / (ni * nj) >= tau)
}

/// Records `mean((R̃_tᵀ e_t − x_t)²)` over the batch. `rows[k]` is the row of
/// `embedding` for batch item `k`, projected with `ops[k]` and compared with
/// row `k` of `targets`.
pub fn record_reconstruction<'a>(
    tape: &mut Tape<'a>,
    embedding: Var,
    rows: &[usize],
    ops: &[&'a SaturationOperator],
    targets: &'a Matrix,
) -> Result<Var> {
    if rows.len() != ops.len() || rows.len() != targets.rows() {
        return Err(Error::Dimension {
            op: "reconstruction_loss",
            lhs: (rows.len(), ops.len()),
            rhs: targets.shape(),
        });
    }
    let mut projected = Vec::with_capacity(rows.len());
    for (&r, op) in rows.iter().zip(ops) {
        let e = tape.gather_rows(embedding, &[r])?;
        let m = tape.constant(op.matrix());
        projected.push(tape.matmul(e, m)?);
    }
    let stacked = tape.concat_rows(&projected)?;
    let x = tape.constant(targets);
    let residual = tape.sub(stacked, x)?;
    let sq = tape.square(residual);
    tape.mean(sq)
}

/// Records the mean over pairs of
/// `y·D² + (1−y)·max(0, m−D)² + λ_min·max(0, d_min−D)² + λ_max·max(0, D−d_max)²`
/// with `D = ‖e_i − e_j‖₂`. An empty pair list contributes zero.
pub fn record_contrastive(
    tape: &mut Tape<'_>,
    embedding: Var,
    pairs: &[Pair],
    cfg: &GroundingConfig,
) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(tape.constant_owned(Matrix::zeros(1, 1)));
    }
    let is: Vec<usize> = pairs.iter().map(|p| p.i).collect();
    let js: Vec<usize> = pairs.iter().map(|p| p.j).collect();
    let y = Matrix::col_vector(pairs.iter().map(|p| f64::from(u8::from(p.similar))).collect());
    let not_y = y.map(|v| 1.0 - v);

    let a = tape.gather_rows(embedding, &is)?;
    let b = tape.gather_rows(embedding, &js)?;
    let diff = tape.sub(a, b)?;
    let dist = tape.row_norm(diff);

    let d2 = tape.square(dist);
    let yv = tape.constant_owned(y);
    let similar = tape.mul(yv, d2)?;

    let gap = tape.hinge(dist, cfg.margin);
    let gap2 = tape.square(gap);
    let nyv = tape.constant_owned(not_y);
    let dissimilar = tape.mul(nyv, gap2)?;

    let under = tape.hinge(dist, cfg.d_min);
    let under2 = tape.square(under);
    let under2 = tape.scale(under2, cfg.lambda_min);

    let over = tape.add_scalar(dist, -cfg.d_max);
    let over = tape.relu(over);
    let over2 = tape.square(over);
    let over2 = tape.scale(over2, cfg.lambda_max);

    let s = tape.add(similar, dissimilar)?;
    let s = tape.add(s, under2)?;
    let s = tape.add(s, over2)?;
    tape.mean(s)
}

/// Plain evaluation of the reconstruction loss.
pub fn reconstruction_loss(
    e_batch: &Matrix,
    ops: &[&SaturationOperator],
    x_batch: &Matrix,
) -> Result<f64> {
    let mut tape = Tape::new();
    let e = tape.constant(e_batch);
    let rows: Vec<usize> = (0..e_batch.rows()).collect();
    let l = record_reconstruction(&mut tape, e, &rows, ops, x_batch)?;
    Ok(tape.scalar(l))
}

/// Plain evaluation of the contrastive loss. Pairs must reference kept
/// tokens (`kept_mask[t]` true).
pub fn contrastive_loss(
    embedding: &Matrix,
    pairs: &[Pair],
    kept_mask: &[bool],
    cfg: &GroundingConfig,
) -> Result<f64> {
    for p in pairs {
        for t in [p.i, p.j] {
            if !kept_mask.get(t).copied().unwrap_or(false) {
                return Err(Error::Contract(format!(
                    "pair ({}, {}) references excluded token {t}",
                    p.i, p.j
                )));
            }
        }
    }
    let mut tape = Tape::new();
    let e = tape.constant(embedding);
    let l = record_contrastive(&mut tape, e, pairs, cfg)?;
    Ok(tape.scalar(l))
}
