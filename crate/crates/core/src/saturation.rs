//! Token-specific saturation operators.
//!
//! A fixed soft lower-triangular projector `R_z` (d×f) is composed with a
//! per-token rotation `R(θ_t)` (f×f) to give `R̃_t = R_z · R(θ_t)`. The
//! projected embedding of token `t` is `ẽ_t = R̃_tᵀ e_t`. Operators are pure
//! functions of `(d, f, t, |V|)` and are never trained.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_LOWER: f64 = 0.55;
pub const DEFAULT_UPPER: f64 = 0.45;

/// Soft lower-triangular projector: `lower` on and below the diagonal,
/// `upper` above it.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseProjector {
    matrix: Matrix,
    pub lower: f64,
    pub upper: f64,
}

impl BaseProjector {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// Projected (feature) dimension `f`.
    pub fn feature_dim(&self) -> usize {
        self.matrix.cols()
    }
}

pub fn base_projector(d: usize, f: usize, lower: f64, upper: f64) -> Result<BaseProjector> {
    if f == 0 {
        return Err(Error::Config("projected dimension must be at least 1".into()));
    }
    if d < f {
        return Err(Error::Config(format!(
            "embedding dimension {d} is smaller than projected dimension {f}; the projector must reduce dimension"
        )));
    }
    if lower == 0.0 || upper == 0.0 || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::Config(format!(
            "projector entries must be finite and non-zero (lower {lower}, upper {upper})"
        )));
    }
    Ok(BaseProjector {
        matrix: Matrix::from_fn(d, f, |i, j| if i >= j { lower } else { upper }),
        lower,
        upper,
    })
}

/// `θ_t = t / (|V| + 1)`, in radians.
pub fn normalized_angle(t: usize, vocab_size: usize) -> Result<f64> {
    if t >= vocab_size {
        return Err(Error::Index {
            index: t,
            size: vocab_size,
        });
    }
    Ok(t as f64 / (vocab_size as f64 + 1.0))
}

/// Block-diagonal rotation: `⌊f/2⌋` copies of the 2×2 rotation by `theta` on
/// coordinate pairs (0,1), (2,3), …, with a trailing 1 when `f` is odd.
pub fn rotation_matrix(theta: f64, f: usize) -> Matrix {
    let (s, c) = theta.sin_cos();
    let mut r = Matrix::identity(f);
    for p in 0..f / 2 {
        let (i, j) = (2 * p, 2 * p + 1);
        r.set(i, i, c);
        r.set(i, j, -s);
        r.set(j, i, s);
        r.set(j, j, c);
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRotation {
    pub t: usize,
    pub theta: f64,
    pub matrix: Matrix,
}

impl TokenRotation {
    pub fn new(t: usize, vocab_size: usize, f: usize) -> Result<Self> {
        let theta = normalized_angle(t, vocab_size)?;
        Ok(Self {
            t,
            theta,
            matrix: rotation_matrix(theta, f),
        })
    }
}

/// `R̃_t = R_z · R(θ_t)`, shape d×f.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationOperator {
    pub t: usize,
    matrix: Matrix,
}

impl SaturationOperator {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

pub fn token_operator(
    base: &BaseProjector,
    t: usize,
    vocab_size: usize,
) -> Result<SaturationOperator> {
    let rot = TokenRotation::new(t, vocab_size, base.feature_dim())?;
    Ok(SaturationOperator {
        t,
        matrix: base.matrix.matmul(&rot.matrix)?,
    })
}

/// `ẽ = R̃ᵀ e`.
pub fn project(e: &[f64], op: &SaturationOperator) -> Result<Vec<f64>> {
    let m = &op.matrix;
    if e.len() != m.rows() {
        return Err(Error::Dimension {
            op: "project",
            lhs: (e.len(), 1),
            rhs: m.shape(),
        });
    }
    let mut out = vec![0.0; m.cols()];
    for (i, &ei) in e.iter().enumerate() {
        for (o, r) in out.iter_mut().zip(m.row(i)) {
            *o += r * ei;
        }
    }
    Ok(out)
}

/// Projects each row of `e` with the operator at the same position.
pub fn project_rows(e: &Matrix, ops: &[&SaturationOperator]) -> Result<Matrix> {
    if e.rows() != ops.len() {
        return Err(Error::Dimension {
            op: "project_rows",
            lhs: e.shape(),
            rhs: (ops.len(), 0),
        });
    }
    let f = ops.first().map_or(0, |o| o.matrix.cols());
    let mut data = Vec::with_capacity(e.rows() * f);
    for (i, op) in ops.iter().enumerate() {
        data.extend(project(e.row(i), op)?);
    }
    Matrix::from_vec(e.rows(), f, data)
}

/// Operators for a fixed set of token indices, built once and shared
/// read-only during training.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorBank {
    vocab_size: usize,
    tokens: Vec<usize>,
    ops: Vec<SaturationOperator>,
}

impl OperatorBank {
    pub fn new(base: &BaseProjector, vocab_size: usize, tokens: &[usize]) -> Result<Self> {
        let ops = tokens
            .iter()
            .map(|&t| token_operator(base, t, vocab_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vocab_size,
            tokens: tokens.to_vec(),
            ops,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// Operator at position `i` of the bank (not vocabulary index).
    pub fn get(&self, i: usize) -> &SaturationOperator {
        &self.ops[i]
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Little-endian bytes of every operator in bank order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.ops.iter().flat_map(|o| o.matrix.to_le_bytes()).collect()
    }
}

/// CSV dump: header `token,v0..v{d·f−1}`, one row-major line per token,
/// 17 significant digits.
pub fn operator_csv(base: &BaseProjector, vocab_size: usize, tokens: &[usize]) -> Result<String> {
    let n = base.dim() * base.feature_dim();
    let mut out = String::from("token");
    for k in 0..n {
        let _ = write!(out, ",v{k}");
    }
    out.push('\n');
    for &t in tokens {
        let op = token_operator(base, t, vocab_size)?;
        out.push_str(&t.to_string());
        for v in op.matrix.as_slice() {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    Ok(out)
}
