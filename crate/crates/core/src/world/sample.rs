use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    apply_selection, covariance_factor, TargetNoiseShape, World, WorldError, XDistribution,
};
use crate::linalg::Matrix;

/// Aligned true and observed columns for `n` generated rows.
///
/// * `y_true[i] == f*(x_true[i]) + epsilon[i]` exactly (same float ops).
/// * `y_observed[i] == y_true[i] + delta_y[i]`.
/// * column `k` of `x_observed` is column `observed_features[k]` of
///   `x_true + delta_x`, coarsened when the world asks for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBundle {
    pub x_true: Matrix,
    pub x_observed: Matrix,
    pub y_true: Vec<f64>,
    pub y_observed: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub delta_y: Vec<f64>,
    /// Feature error draws for all `d` true features (before omission).
    pub delta_x: Matrix,
    pub observed_features: Vec<usize>,
    pub selected: Vec<bool>,
    /// Fraction of rows flagged in `selected`.
    pub coverage: f64,
}

impl SampleBundle {
    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sub-bundle of the listed rows (selection flags carried along).
    pub fn subset(&self, idx: &[usize]) -> SampleBundle {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let selected: Vec<bool> = idx.iter().map(|&i| self.selected[i]).collect();
        let coverage = coverage_of(&selected);
        SampleBundle {
            x_true: self.x_true.select_rows(idx),
            x_observed: self.x_observed.select_rows(idx),
            y_true: pick(&self.y_true),
            y_observed: pick(&self.y_observed),
            epsilon: pick(&self.epsilon),
            delta_y: pick(&self.delta_y),
            delta_x: self.delta_x.select_rows(idx),
            observed_features: self.observed_features.clone(),
            selected,
            coverage,
        }
    }

    /// Only the rows flagged as selected.
    pub fn selected_rows(&self) -> SampleBundle {
        self.subset(&self.selected_indices())
    }
}

pub(crate) fn coverage_of(selected: &[bool]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    selected.iter().filter(|&&s| s).count() as f64 / selected.len() as f64
}

/// Generates `n` rows from `world`.
///
/// Each channel draws from its own substream (`{label}/x`, `{label}/eps`,
/// `{label}/delta_y`, `{label}/delta_x`, `{label}/selection`), so changing
/// one corruption spec leaves the draws of every other channel untouched,
/// and the first `m` rows of an `n`-row sample equal an `m`-row sample.
pub fn sample(world: &World, n: usize, label: &str) -> Result<SampleBundle, WorldError> {
    let d = world.input_dim();
    let x_true = draw_x(world, n, &format!("{label}/x"))?;
    let epsilon = world.draw_epsilon(&x_true, &format!("{label}/eps"));
    let y_true: Vec<f64> = x_true
        .iter_rows()
        .zip(&epsilon)
        .map(|(x, e)| world.f_star.eval(x) + e)
        .collect();

    let delta_y = draw_delta_y(world, &y_true, &format!("{label}/delta_y"));
    let y_observed: Vec<f64> = y_true.iter().zip(&delta_y).map(|(y, dy)| y + dy).collect();

    let fnoise = &world.feature_noise;
    let factor = covariance_factor(&fnoise.covariance, "feature_noise.covariance")?;
    let mut delta_x = Matrix::zeros(n, d);
    let mut rng = world.rng(&format!("{label}/delta_x"));
    let mut z = vec![0.0; d];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut rng);
        }
        let row = delta_x.row_mut(i);
        for (j, out) in row.iter_mut().enumerate() {
            let mut v = fnoise.means[j];
            for (k, zk) in z.iter().enumerate().take(j + 1) {
                v += factor[(j, k)] * zk;
            }
            *out = v;
        }
    }

    let observed_features = fnoise.observed_features();
    let mut x_observed = Matrix::zeros(n, observed_features.len());
    for i in 0..n {
        for (k, &j) in observed_features.iter().enumerate() {
            let mut v = x_true[(i, j)] + delta_x[(i, j)];
            if let Some(steps) = &fnoise.coarsening {
                if steps[j] > 0.0 {
                    v = steps[j] * (v / steps[j]).round();
                }
            }
            x_observed[(i, k)] = v;
        }
    }

    let bundle = SampleBundle {
        x_true,
        x_observed,
        y_true,
        y_observed,
        epsilon,
        delta_y,
        delta_x,
        observed_features,
        selected: vec![true; n],
        coverage: if n == 0 { 0.0 } else { 1.0 },
    };
    apply_selection(
        world,
        bundle,
        &world.selection,
        &format!("{label}/selection"),
    )
}

fn draw_x(world: &World, n: usize, label: &str) -> Result<Matrix, WorldError> {
    let d = world.input_dim();
    let mut rng = world.rng(label);
    let mut x = Matrix::zeros(n, d);
    match &world.x_distribution {
        XDistribution::IidGaussian { mean, std } => {
            for i in 0..n {
                for v in x.row_mut(i) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = mean + std * z;
                }
            }
        }
        XDistribution::UniformBox { low, high } => {
            for i in 0..n {
                for v in x.row_mut(i) {
                    let u: f64 = rng.random();
                    *v = low + (high - low) * u;
                }
            }
        }
        XDistribution::CorrelatedGaussian { mean, covariance } => {
            let factor = covariance_factor(covariance, "x_distribution.covariance")?;
            let mut z = vec![0.0; d];
            for i in 0..n {
                for zj in z.iter_mut() {
                    *zj = StandardNormal.sample(&mut rng);
                }
                for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                    let mut acc = mean.get(j).copied().unwrap_or(0.0);
                    for (k, zk) in z.iter().enumerate().take(j + 1) {
                        acc += factor[(j, k)] * zk;
                    }
                    *v = acc;
                }
            }
        }
    }
    Ok(x)
}

fn draw_delta_y(world: &World, y_true: &[f64], label: &str) -> Vec<f64> {
    let spec = &world.target_noise;
    let sd = spec.variance.sqrt();
    let mut rng = world.rng(label);
    y_true
        .iter()
        .map(|&y| match spec.distribution {
            TargetNoiseShape::Gaussian => {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.mean + sd * z
            }
            TargetNoiseShape::Uniform => {
                let u: f64 = rng.random();
                spec.mean + sd * 3f64.sqrt() * (2.0 * u - 1.0)
            }
            TargetNoiseShape::Quantization { step } => {
                let z: f64 = StandardNormal.sample(&mut rng);
                let noisy = y + spec.mean + sd * z;
                step * (noisy / step).round() - y
            }
        })
        .collect()
}
