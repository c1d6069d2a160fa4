use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
    Manhattan,
}

/// k-nearest-neighbour regressor over standardized features.
///
/// Standardization uses the training mean and sample standard deviation of
/// each column (a constant column gets scale 1). Neighbours are ranked by
/// `(distance, training row index)`, so equidistant rows enter in index
/// order. The `k` labels are then summed in ascending order of value, which
/// makes the prediction independent of row order whenever the neighbour set
/// is unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    pub distance: Distance,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub x_standardized: Matrix,
    pub y: Vec<f64>,
}

pub fn fit(x: &Matrix, y: &[f64], k: usize, distance: Distance) -> KnnParams {
    let (n, d) = (x.rows(), x.cols());
    let mut means = vec![0.0; d];
    let mut scales = vec![1.0; d];
    for j in 0..d {
        let col = x.column(j);
        means[j] = crate::stats::mean(&col);
        let sd = if n > 1 {
            crate::stats::sample_variance(&col).sqrt()
        } else {
            0.0
        };
        if sd > 0.0 && sd.is_finite() {
            scales[j] = sd;
        }
    }
    let mut x_standardized = x.clone();
    for i in 0..n {
        for (j, v) in x_standardized.row_mut(i).iter_mut().enumerate() {
            *v = (*v - means[j]) / scales[j];
        }
    }
    KnnParams {
        k,
        distance,
        means,
        scales,
        x_standardized,
        y: y.to_vec(),
    }
}

impl KnnParams {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let q: Vec<f64> = x
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut ranked: Vec<(f64, usize)> = self
            .x_standardized
            .iter_rows()
            .enumerate()
            .map(|(i, r)| (self.dist(&q, r), i))
            .collect();
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < ranked.len() {
            ranked.select_nth_unstable_by(self.k - 1, by_rank);
            ranked.truncate(self.k);
        }
        let mut labels: Vec<f64> = ranked.iter().map(|&(_, i)| self.y[i]).collect();
        labels.sort_by(f64::total_cmp);
        labels.iter().sum::<f64>() / self.k as f64
    }

    fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.distance {
            // squared: same ordering, no sqrt
            Distance::Euclidean => a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum(),
            Distance::Manhattan => a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum(),
        }
    }
}
