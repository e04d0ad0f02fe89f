//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::exec::Exec;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::Matrix;

/// A scalar function of a list of parameter blocks that can also report its
/// analytic gradient.
pub trait Objective: Sync {
    fn value(&self, params: &[Matrix]) -> Result<f64>;
    fn value_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)>;
}

/// Adapts a graph builder into an [`Objective`]. The builder receives one
/// parameter [`Var`] per block, in order, and returns the scalar loss node.
pub struct TapeObjective<F>(pub F);

impl<F> Objective for TapeObjective<F>
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var> + Sync,
{
    fn value(&self, params: &[Matrix]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = (self.0)(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    }

    fn value_and_grad(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = (self.0)(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        Ok((tape.scalar(loss), grads.into_vec()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Coordinates checked per block; `None` checks every coordinate.
    pub max_coords_per_block: Option<usize>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            max_coords_per_block: None,
            seed: 0,
            exec: Exec::Serial,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub block: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<Discrepancy>,
}

/// `|a − n| / max(1e-12, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// `(f(p + ε·e_i) − f(p − ε·e_i)) / 2ε` for coordinate `index` of block `block`.
pub fn central_difference(
    f: impl Fn(&[Matrix]) -> f64,
    params: &[Matrix],
    block: usize,
    index: usize,
    epsilon: f64,
) -> f64 {
    let mut work = params.to_vec();
    let x = params[block].as_slice()[index];
    work[block].as_mut_slice()[index] = x + epsilon;
    let plus = f(&work);
    work[block].as_mut_slice()[index] = x - epsilon;
    let minus = f(&work);
    (plus - minus) / (2.0 * epsilon)
}

/// Compares the analytic gradient of `objective` at `params` against central
/// differences and reports the largest relative error over the checked
/// coordinates.
pub fn grad_check(
    objective: &dyn Objective,
    params: &[Matrix],
    epsilon: f64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = objective.value_and_grad(params)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut coords = Vec::new();
    for (b, p) in params.iter().enumerate() {
        match opts.max_coords_per_block {
            Some(k) if k < p.len() => {
                let mut picked = sample(&mut rng, p.len(), k).into_vec();
                picked.sort_unstable();
                coords.extend(picked.into_iter().map(|i| (b, i)));
            }
            _ => coords.extend((0..p.len()).map(|i| (b, i))),
        }
    }

    let numeric = opts.exec.map(&coords, |&(b, i)| -> Result<f64> {
        let mut work = params.to_vec();
        let x = params[b].as_slice()[i];
        work[b].as_mut_slice()[i] = x + epsilon;
        let plus = objective.value(&work)?;
        work[b].as_mut_slice()[i] = x - epsilon;
        let minus = objective.value(&work)?;
        Ok((plus - minus) / (2.0 * epsilon))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: coords.len(),
        worst: None,
    };
    for (&(b, i), n) in coords.iter().zip(numeric) {
        let n = n?;
        let a = analytic[b].as_slice()[i];
        let rel = relative_error(a, n);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(Discrepancy {
                block: b,
                index: i,
                analytic: a,
                numeric: n,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_norm_is_exact() {
        let p = vec![Matrix::from_fn(3, 3, |i, j| (i as f64 - 1.3) * (j as f64 + 0.4))];
        let obj = TapeObjective(|t: &mut Tape, v: &[Var]| {
            let s = t.square(v[0]);
            Ok(t.sum(s))
        });
        let r = grad_check(&obj, &p, 1e-6, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 9);
    }

    #[test]
    fn constant_loss_reports_zero_on_both_sides() {
        let p = vec![Matrix::filled(2, 2, 0.5)];
        let k = Matrix::filled(1, 1, 4.2);
        let obj = TapeObjective(move |t: &mut Tape, _v: &[Var]| Ok(t.constant_owned(k.clone())));
        let r = grad_check(&obj, &p, 1e-6, GradCheckOptions::default()).unwrap();
        let w = r.worst.unwrap();
        assert_eq!(w.analytic, 0.0);
        assert!(w.numeric.abs() < 1e-9);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn sampling_limits_checked_coordinates() {
        let p = vec![Matrix::filled(10, 10, 0.1), Matrix::filled(1, 3, 0.2)];
        let obj = TapeObjective(|t: &mut Tape, v: &[Var]| {
            let a = t.sum(v[0]);
            let b = t.sum(v[1]);
            t.add(a, b)
        });
        let opts = GradCheckOptions {
            max_coords_per_block: Some(5),
            ..Default::default()
        };
        let r = grad_check(&obj, &p, 1e-6, opts).unwrap();
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn parallel_matches_serial() {
        let p = vec![Matrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.2 - 0.4)];
        let obj = TapeObjective(|t: &mut Tape, v: &[Var]| {
            let s = t.softmax_rows(v[0]);
            let q = t.square(s);
            Ok(t.sum(q))
        });
        let serial = grad_check(&obj, &p, 1e-6, GradCheckOptions::default()).unwrap();
        let par = grad_check(
            &obj,
            &p,
            1e-6,
            GradCheckOptions {
                exec: Exec::Parallel,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(serial, par);
    }
}
