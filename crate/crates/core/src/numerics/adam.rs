use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for a fixed list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamParams,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    /// One pair of zeroed moment matrices per block shape.
    pub fn new(hyper: AdamParams, shapes: &[(usize, usize)]) -> Self {
        Self {
            hyper,
            step: 0,
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, block: usize) -> (&Matrix, &Matrix) {
        (&self.first[block], &self.second[block])
    }

    /// Applies one bias-corrected update to every block. Only rows whose
    /// `row_mask` entry is true are touched (all rows when the mask is `None`).
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        self.step_masked(params, grads, None)
    }

    pub fn step_masked(
        &mut self,
        params: &mut [&mut Matrix],
        grads: &[Matrix],
        row_mask: Option<&[Option<&[bool]>]>,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: (params.len(), grads.len()),
                rhs: (self.first.len(), self.first.len()),
            });
        }
        for (b, (p, g)) in params.iter().zip(grads).enumerate() {
            let want = self.first[b].shape();
            for shape in [p.shape(), g.shape()] {
                if shape != want {
                    return Err(Error::Dimension {
                        op: "adam_step",
                        lhs: shape,
                        rhs: want,
                    });
                }
            }
        }

        self.step += 1;
        let AdamParams {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let mask = row_mask.and_then(|m| m[b]);
            let cols = p.cols();
            let m = self.first[b].as_mut_slice();
            let v = self.second[b].as_mut_slice();
            let pv = p.as_mut_slice();
            for (k, &gk) in g.as_slice().iter().enumerate() {
                if let Some(mask) = mask {
                    if !mask[k / cols] {
                        continue;
                    }
                }
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                pv[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Single-block convenience wrapper.
pub fn adam_step(state: &mut AdamState, params: &mut Matrix, grads: &Matrix) -> Result<()> {
    state.step(&mut [params], std::slice::from_ref(grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = Matrix::from_rows(&[[0.3, -0.2], [1.0, 4.0]]);
        let before = p.clone();
        let mut s = AdamState::new(AdamParams::default(), &[(2, 2)]);
        adam_step(&mut s, &mut p, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², update = lr·g/(|g|+ε) ≈ lr·sign(g)
        let mut p = Matrix::zeros(1, 3);
        let g = Matrix::row_vector(vec![2.5, -0.1, 7.0]);
        let mut s = AdamState::new(AdamParams::default(), &[(1, 3)]);
        adam_step(&mut s, &mut p, &g).unwrap();
        for (x, gx) in p.as_slice().iter().zip(g.as_slice()) {
            let expected = -1e-3 * gx.signum();
            assert!((x - expected).abs() < 1e-9, "{x} vs {expected}");
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = Matrix::from_fn(3, 2, |i, j| i as f64 * 0.1 - j as f64 * 0.3);
            let mut s = AdamState::new(AdamParams::default(), &[(3, 2)]);
            for k in 0..20 {
                let g = p.map(|x| (x * 3.1 + k as f64).sin());
                adam_step(&mut s, &mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run().to_le_bytes(), run().to_le_bytes());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Matrix::zeros(2, 2);
        let mut s = AdamState::new(AdamParams::default(), &[(2, 2)]);
        assert!(matches!(
            adam_step(&mut s, &mut p, &Matrix::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn masked_rows_are_untouched() {
        let mut p = Matrix::zeros(3, 2);
        let g = Matrix::filled(3, 2, 1.0);
        let mut s = AdamState::new(AdamParams::default(), &[(3, 2)]);
        let mask = [true, false, true];
        s.step_masked(&mut [&mut p], &[g], Some(&[Some(&mask[..])]))
            .unwrap();
        assert_eq!(p.row(1), &[0.0, 0.0]);
        assert!(p.row(0)[0] < 0.0);
        assert_eq!(s.moments(0).0.row(1), &[0.0, 0.0]);
    }
}
