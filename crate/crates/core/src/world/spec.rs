use serde::{Deserialize, Serialize};

/// Shape of the ground-truth function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionFamily {
    /// `sum_j c_j x_j`; `input_dim` coefficients, no intercept.
    Linear,
    /// Additive polynomial `c_0 + sum_j sum_{p=1..degree} c_{j,p} x_j^p`;
    /// `1 + input_dim * degree` coefficients laid out feature-major.
    Polynomial,
    /// `a sin(pi x0 x1) + b (x2 - 0.5)^2 + c x3 + d x4`; four coefficients,
    /// `input_dim >= 5` (extra inputs are irrelevant).
    Friedman,
    /// `base + sum_j jump_j * [x_j >= threshold_j]`; coefficients are
    /// `[base, threshold_0, jump_0, threshold_1, jump_1, ...]`.
    /// Right-continuous: at `x_j == threshold_j` the jump is taken.
    PiecewiseStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueFunctionSpec {
    pub family: FunctionFamily,
    pub input_dim: usize,
    pub coefficients: Vec<f64>,
    /// Polynomial degree; required for the polynomial family only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interactions: Vec<Interaction>,
}

impl TrueFunctionSpec {
    pub fn linear(coefficients: Vec<f64>) -> Self {
        Self {
            family: FunctionFamily::Linear,
            input_dim: coefficients.len(),
            coefficients,
            degree: None,
            interactions: Vec::new(),
        }
    }

    /// Number of coefficients the family needs for this input dimension.
    pub fn expected_coefficients(&self) -> Option<usize> {
        let d = self.input_dim;
        match self.family {
            FunctionFamily::Linear => Some(d),
            FunctionFamily::Polynomial => self.degree.map(|p| 1 + d * p),
            FunctionFamily::Friedman => Some(4),
            FunctionFamily::PiecewiseStep => Some(1 + 2 * d),
        }
    }

    /// Evaluates `f*(x)`. Assumes a validated spec and `x.len() == input_dim`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let c = &self.coefficients;
        let base = match self.family {
            FunctionFamily::Linear => c.iter().zip(x).map(|(a, b)| a * b).sum(),
            FunctionFamily::Polynomial => {
                let degree = self.degree.unwrap_or(1);
                let mut acc = c[0];
                for (j, &xj) in x.iter().enumerate() {
                    let mut pow = 1.0;
                    for p in 0..degree {
                        pow *= xj;
                        acc += c[1 + j * degree + p] * pow;
                    }
                }
                acc
            }
            FunctionFamily::Friedman => {
                c[0] * (std::f64::consts::PI * x[0] * x[1]).sin()
                    + c[1] * (x[2] - 0.5) * (x[2] - 0.5)
                    + c[2] * x[3]
                    + c[3] * x[4]
            }
            FunctionFamily::PiecewiseStep => {
                let mut acc = c[0];
                for (j, &xj) in x.iter().enumerate() {
                    if xj >= c[1 + 2 * j] {
                        acc += c[2 + 2 * j];
                    }
                }
                acc
            }
        };
        self.interactions
            .iter()
            .fold(base, |acc, t| acc + t.weight * x[t.i] * x[t.j])
    }
}

/// Distribution of `x_true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XDistribution {
    IidGaussian {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        std: f64,
    },
    UniformBox {
        low: f64,
        high: f64,
    },
    CorrelatedGaussian {
        #[serde(default)]
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
}

impl Default for XDistribution {
    fn default() -> Self {
        XDistribution::IidGaussian {
            mean: 0.0,
            std: 1.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Unit-variance shape of the aleatoric draw before scaling.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AleatoricShape {
    #[default]
    Gaussian,
    /// Student-t with `dof > 2` degrees of freedom, rescaled to unit variance.
    StudentT { dof: f64 },
    /// Two-component Gaussian scale mixture: with probability `weight` the
    /// draw uses a standard deviation `scale_ratio` times the base one.
    /// Rescaled to unit variance overall.
    Mixture { weight: f64, scale_ratio: f64 },
}

/// Variance multiplier `m(x_true)` for heteroskedastic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeteroskedasticLink {
    /// `1 + |x_feature|`
    Abs { feature: usize },
    /// `exp(rate * x_feature)`
    Exp { feature: usize, rate: f64 },
}

impl HeteroskedasticLink {
    pub fn multiplier(&self, x: &[f64]) -> f64 {
        match *self {
            HeteroskedasticLink::Abs { feature } => 1.0 + x[feature].abs(),
            HeteroskedasticLink::Exp { feature, rate } => (rate * x[feature]).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AleatoricSpec {
    #[serde(default)]
    pub distribution: AleatoricShape,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heteroskedastic: Option<HeteroskedasticLink>,
}

impl AleatoricSpec {
    pub fn gaussian(variance: f64) -> Self {
        Self {
            variance,
            ..Self::default()
        }
    }

    /// Variance of ε at `x_true`.
    pub fn variance_at(&self, x: &[f64]) -> f64 {
        match &self.heteroskedastic {
            Some(link) => self.variance * link.multiplier(x),
            None => self.variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetNoiseShape {
    #[default]
    Gaussian,
    Uniform,
    /// Gaussian perturbation, then rounding of the observed target to the
    /// nearest multiple of `step`.
    Quantization {
        step: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetNoiseSpec {
    #[serde(default)]
    pub distribution: TargetNoiseShape,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub variance: f64,
}

impl TargetNoiseSpec {
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        Self {
            distribution: TargetNoiseShape::Gaussian,
            mean,
            variance,
        }
    }
}

/// Feature measurement and construction error.
///
/// Empty `means` / `covariance` / `omission_mask` are filled with zeros /
/// `false` by [`build_world`](super::build_world).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureNoiseSpec {
    #[serde(default)]
    pub means: Vec<f64>,
    #[serde(default)]
    pub covariance: Vec<Vec<f64>>,
    #[serde(default)]
    pub omission_mask: Vec<bool>,
    /// Per-feature quantization step applied after the additive error;
    /// `0` leaves a feature continuous.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarsening: Option<Vec<f64>>,
}

impl FeatureNoiseSpec {
    /// Isotropic Gaussian error with variance `var` on each of `d` features.
    pub fn isotropic(d: usize, var: f64) -> Self {
        let covariance = (0..d)
            .map(|i| (0..d).map(|j| if i == j { var } else { 0.0 }).collect())
            .collect();
        Self {
            means: vec![0.0; d],
            covariance,
            omission_mask: vec![false; d],
            coarsening: None,
        }
    }

    /// Indices of `x_true` columns that survive into the observed view.
    pub fn observed_features(&self) -> Vec<usize> {
        self.omission_mask
            .iter()
            .enumerate()
            .filter(|(_, &omit)| !omit)
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    None,
    /// Keep the `target_coverage` fraction of rows with the lowest score.
    Threshold,
    /// Keep each row independently with a probability that decreases in the
    /// score, calibrated so the expected coverage is `target_coverage`.
    Probabilistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionScore {
    #[default]
    Epsilon,
    YTrue,
    Feature {
        index: usize,
    },
    /// Uniform draws independent of every other quantity.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    #[serde(default)]
    pub rule: SelectionRule,
    #[serde(default)]
    pub score: SelectionScore,
    #[serde(default = "one")]
    pub target_coverage: f64,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        Self {
            rule: SelectionRule::None,
            score: SelectionScore::Epsilon,
            target_coverage: 1.0,
        }
    }
}
