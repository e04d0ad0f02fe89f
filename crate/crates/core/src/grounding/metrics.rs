use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

pub const HIST_BINS: usize = 64;
pub const HIST_MIN: f64 = -3.0;
pub const HIST_MAX: f64 = 3.0;

/// Per-epoch losses and the embedding weight histogram (64 equal bins on
/// [−3, 3]; values below go to `underflow`, above to `overflow`, and 3.0
/// itself lands in the last bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_total: f64,
    pub l_recon: f64,
    pub l_contrastive: f64,
    pub histogram: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl EpochMetrics {
    pub fn new(epoch: usize, l_total: f64, l_recon: f64, l_contrastive: f64, weights: &Matrix) -> Self {
        let mut histogram = vec![0u64; HIST_BINS];
        let (mut underflow, mut overflow) = (0, 0);
        let width = (HIST_MAX - HIST_MIN) / HIST_BINS as f64;
        for &w in weights.as_slice() {
            if w < HIST_MIN {
                underflow += 1;
            } else if w > HIST_MAX {
                overflow += 1;
            } else {
                let bin = (((w - HIST_MIN) / width) as usize).min(HIST_BINS - 1);
                histogram[bin] += 1;
            }
        }
        Self {
            epoch,
            l_total,
            l_recon,
            l_contrastive,
            histogram,
            underflow,
            overflow,
        }
    }

    pub fn count(&self) -> u64 {
        self.histogram.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

/// `epoch,l_total,l_recon,l_contrastive,hist_bin_0..hist_bin_63,underflow,overflow`
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,l_total,l_recon,l_contrastive");
    for b in 0..HIST_BINS {
        let _ = write!(out, ",hist_bin_{b}");
    }
    out.push_str(",underflow,overflow\n");
    for m in metrics {
        let _ = write!(out, "{},{:?},{:?},{:?}", m.epoch, m.l_total, m.l_recon, m.l_contrastive);
        for c in &m.histogram {
            let _ = write!(out, ",{c}");
        }
        let _ = writeln!(out, ",{},{}", m.underflow, m.overflow);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_edges() {
        let w = Matrix::row_vector(vec![-3.5, -3.0, 0.0, 2.99, 3.0, 3.01]);
        let m = EpochMetrics::new(0, 0.0, 0.0, 0.0, &w);
        assert_eq!(m.underflow, 1);
        assert_eq!(m.overflow, 1);
        assert_eq!(m.histogram[0], 1);
        assert_eq!(m.histogram[32], 1);
        assert_eq!(m.histogram[63], 2);
        assert_eq!(m.count(), 6);
    }

    #[test]
    fn csv_columns() {
        let m = EpochMetrics::new(2, 1.5, 1.0, 0.5, &Matrix::zeros(2, 2));
        let csv = metrics_csv(&[m]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 4 + 64 + 2);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 70);
        assert_eq!(&row[..4], &["2", "1.5", "1.0", "0.5"]);
    }
}
