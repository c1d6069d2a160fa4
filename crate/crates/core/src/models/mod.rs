//! Regression model zoo with a uniform fit / predict contract.
//!
//! Three trainable families (closed-form ridge, k-nearest neighbours, and a
//! small MLP) plus an oracle wrapper around the world's true function.

pub mod knn;
pub mod mlp;
mod regimes;
pub mod ridge;

pub use knn::{Distance, KnnParams};
pub use mlp::{Activation, InitScheme, MlpSpec, Network, TrainingTrace};
pub use regimes::{fit_regimes, RegimeFitError, RegimeModels, TrainingRegime};
pub use ridge::RidgeParams;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::world::TrueFunctionSpec;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Ridge {
        lambda: f64,
    },
    Knn {
        k: usize,
        #[serde(default)]
        distance: Distance,
    },
    Mlp(MlpSpec),
    /// The world's true function; cannot be trained from data.
    Oracle,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |field: &str, reason: &str| {
            Err(FitError::InvalidSpec {
                field: field.to_owned(),
                reason: reason.to_owned(),
            })
        };
        match self {
            ModelSpec::Ridge { lambda } if !(lambda.is_finite() && *lambda >= 0.0) => {
                bad("lambda", "must be finite and >= 0")
            }
            ModelSpec::Knn { k: 0, .. } => bad("k", "must be at least 1"),
            ModelSpec::Mlp(s) => {
                if s.hidden.contains(&0) {
                    bad("hidden", "layer widths must be positive")
                } else if s.epochs == 0 {
                    bad("epochs", "must be at least 1")
                } else if s.batch_size == 0 {
                    bad("batch_size", "must be at least 1")
                } else if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
                    bad("learning_rate", "must be finite and > 0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn min_rows(&self) -> usize {
        match self {
            ModelSpec::Ridge { .. } | ModelSpec::Oracle => 1,
            ModelSpec::Knn { k, .. } => *k,
            ModelSpec::Mlp(s) => s.batch_size,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid model spec: {field}: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least {needed} training rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("singular normal equations at pivot {pivot} (lambda = {lambda})")]
    Singular { pivot: usize, lambda: f64 },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("the oracle is built from the world's true function, not fitted")]
    OracleNotTrainable,
    #[error("gradient checks apply to the mlp family only")]
    NotMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Params {
    Ridge(RidgeParams),
    Knn(KnnParams),
    Mlp(Network),
    Oracle(TrueFunctionSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Training-set mean squared error of the fitted model.
    pub final_loss: f64,
    /// Optimizer steps (zero for closed-form and lazy learners).
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    /// Set by [`fit_regimes`]; `None` for a standalone [`fit`].
    pub regime: Option<TrainingRegime>,
    pub input_dim: usize,
    pub params: Params,
    pub diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct VersionedModel<'a> {
    schema_version: u32,
    model: &'a FittedModel,
}

#[derive(Deserialize)]
struct OwnedVersionedModel {
    schema_version: u32,
    model: FittedModel,
}

impl FittedModel {
    /// Wraps the true function as a model over `x_true`.
    pub fn oracle(f_star: &TrueFunctionSpec) -> FittedModel {
        FittedModel {
            spec: ModelSpec::Oracle,
            regime: Some(TrainingRegime::Oracle),
            input_dim: f_star.input_dim,
            params: Params::Oracle(f_star.clone()),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Ridge(p) => p.predict_row(x),
            Params::Knn(p) => p.predict_row(x),
            Params::Mlp(net) => net.predict_row(x),
            Params::Oracle(f) => f.eval(x),
        }
    }

    /// Versioned JSON document for reproducibility audits.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VersionedModel {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self,
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<FittedModel, String> {
        let doc: OwnedVersionedModel = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(format!(
                "unsupported model schema_version {}",
                doc.schema_version
            ));
        }
        Ok(doc.model)
    }
}

/// Fits `spec` to `(x, y)`.
pub fn fit(spec: &ModelSpec, x: &Matrix, y: &[f64]) -> Result<FittedModel, FitError> {
    spec.validate()?;
    if x.rows() != y.len() {
        return Err(FitError::DimensionMismatch(format!(
            "{} feature rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if x.cols() == 0 {
        return Err(FitError::DimensionMismatch("no feature columns".into()));
    }
    if x.rows() < spec.min_rows() {
        return Err(FitError::TooFewRows {
            needed: spec.min_rows(),
            got: x.rows(),
        });
    }
    let (params, iterations, loss_history) = match spec {
        ModelSpec::Ridge { lambda } => (Params::Ridge(ridge::fit(x, y, *lambda)?), 0, Vec::new()),
        ModelSpec::Knn { k, distance } => {
            (Params::Knn(knn::fit(x, y, *k, *distance)), 0, Vec::new())
        }
        ModelSpec::Mlp(s) => {
            let (net, trace) = mlp::train(s, x, y)?;
            (Params::Mlp(net), trace.steps, trace.loss_history)
        }
        ModelSpec::Oracle => return Err(FitError::OracleNotTrainable),
    };
    let mut model = FittedModel {
        spec: spec.clone(),
        regime: None,
        input_dim: x.cols(),
        params,
        diagnostics: Diagnostics {
            final_loss: 0.0,
            iterations,
            loss_history,
        },
    };
    let preds = predict(&model, x)?;
    model.diagnostics.final_loss = preds
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / y.len() as f64;
    Ok(model)
}

pub fn predict(model: &FittedModel, x: &Matrix) -> Result<Vec<f64>, FitError> {
    if x.cols() != model.input_dim {
        return Err(FitError::DimensionMismatch(format!(
            "model expects {} columns, got {}",
            model.input_dim,
            x.cols()
        )));
    }
    Ok(x.iter_rows().map(|r| model.predict_row(r)).collect())
}

/// Row indices sorted lexicographically by `(x row, y)`.
pub(crate) fn canonical_row_order(x: &Matrix, y: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
            .then(a.cmp(&b))
    });
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub parameter_count: usize,
    pub step: f64,
    /// Denominator floor used in the relative deviation.
    pub floor: f64,
    pub max_abs_deviation: f64,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_deviation: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the backpropagated gradient of the freshly initialised network
/// against central finite differences with step `step` on every parameter.
pub fn check_gradients(
    spec: &ModelSpec,
    x: &Matrix,
    y: &[f64],
    step: f64,
) -> Result<GradientReport, FitError> {
    let ModelSpec::Mlp(s) = spec else {
        return Err(FitError::NotMlp);
    };
    spec.validate()?;
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(FitError::DimensionMismatch(
            "probe rows and targets differ".into(),
        ));
    }
    let floor = 1e-3;
    let mut net = Network::init(s, x.cols());
    let rows: Vec<usize> = (0..x.rows()).collect();
    let (_, analytic) = net.loss_and_gradient(x, y, &rows);
    let base = net.parameters();
    let mut numeric = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for k in 0..base.len() {
        probe[k] = base[k] + step;
        net.set_parameters(&probe);
        let up = net.loss(x, y, &rows);
        probe[k] = base[k] - step;
        net.set_parameters(&probe);
        let down = net.loss(x, y, &rows);
        probe[k] = base[k];
        numeric.push((up - down) / (2.0 * step));
    }
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        let diff = (a - n).abs();
        max_abs = max_abs.max(diff);
        max_rel = max_rel.max(diff / a.abs().max(n.abs()).max(floor));
    }
    Ok(GradientReport {
        parameter_count: base.len(),
        step,
        floor,
        max_abs_deviation: max_abs,
        max_rel_deviation: max_rel,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, eval_true_function, sample, AleatoricSpec, World};

    fn sin_data() -> (Matrix, Vec<f64>) {
        let pi = std::f64::consts::PI;
        let xs: Vec<f64> = (0..500)
            .map(|i| -pi + 2.0 * pi * i as f64 / 499.0)
            .collect();
        (
            Matrix::from_row_major(500, 1, xs.clone()),
            xs.iter().map(|v| v.sin()).collect(),
        )
    }

    fn sin_spec() -> MlpSpec {
        MlpSpec {
            hidden: vec![16],
            activation: Activation::Tanh,
            learning_rate: 0.05,
            epochs: 300,
            batch_size: 16,
            init_seed: 7,
            bias: true,
            init: InitScheme::UniformFanIn,
        }
    }

    #[test]
    fn mlp_learns_sine() {
        let (x, y) = sin_data();
        let m = fit(&ModelSpec::Mlp(sin_spec()), &x, &y).unwrap();
        eprintln!("sine training mse {}", m.diagnostics.final_loss);
        assert!(m.diagnostics.final_loss < 0.01);
        let h = &m.diagnostics.loss_history;
        assert!(h.last().unwrap() < &h[0]);
    }

    #[test]
    fn oracle_passes_the_true_function_through() {
        let f = TrueFunctionSpec::linear(vec![2.0]);
        let m = FittedModel::oracle(&f);
        assert_eq!(
            predict(&m, &Matrix::from_row_major(1, 1, vec![3.0])).unwrap(),
            vec![6.0]
        );
        assert!(matches!(
            fit(&ModelSpec::Oracle, &Matrix::zeros(2, 1), &[0.0, 0.0]),
            Err(FitError::OracleNotTrainable)
        ));
    }

    #[test]
    fn oracle_regime_is_bitwise_eval_true_function() {
        let mut w = World::new(TrueFunctionSpec::linear(vec![0.3, -1.7, 2.2]), 4);
        w.aleatoric = AleatoricSpec::gaussian(1.0);
        let w = build_world(w).unwrap();
        let b = sample(&w, 50, "train").unwrap();
        let r = fit_regimes(&w, &b, &ModelSpec::Ridge { lambda: 0.1 }).unwrap();
        let oracle = r.get(TrainingRegime::Oracle).unwrap();
        for row in b.x_true.iter_rows() {
            assert_eq!(
                oracle.predict_row(row).to_bits(),
                eval_true_function(&w, row).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn ridge_matches_gradient_descent_linear_network() {
        let mut rng = crate::rng::substream(11, "agree");
        use rand_distr::{Distribution, StandardNormal};
        let n = 200;
        let data: Vec<f64> = (0..2 * n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let x = Matrix::from_row_major(n, 2, data);
        let y: Vec<f64> = x
            .iter_rows()
            .map(|r| {
                1.5 * r[0] - 0.5 * r[1]
                    + 0.25
                    + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let ridge = fit(&ModelSpec::Ridge { lambda: 0.0 }, &x, &y).unwrap();
        let spec = MlpSpec {
            hidden: vec![],
            activation: Activation::Identity,
            learning_rate: 0.1,
            epochs: 400,
            batch_size: n,
            init_seed: 1,
            bias: true,
            init: InitScheme::Zeros,
        };
        let lin = fit(&ModelSpec::Mlp(spec), &x, &y).unwrap();
        let (Params::Ridge(r), Params::Mlp(net)) = (&ridge.params, &lin.params) else {
            unreachable!()
        };
        let w = &net.layers[0].weights;
        let b = net.layers[0].bias.as_ref().unwrap()[0];
        for (a, c) in r.coefficients.iter().zip(w) {
            assert!((a - c).abs() < 1e-4, "{a} vs {c}");
        }
        assert!((r.intercept - b).abs() < 1e-4);
    }

    #[test]
    fn gradient_check_small_network() {
        let mut rng = crate::rng::substream(2, "probe");
        use rand::Rng;
        let x = Matrix::from_row_major(
            10,
            2,
            (0..20).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let spec = ModelSpec::Mlp(MlpSpec {
                hidden: vec![4],
                activation: act,
                ..sin_spec()
            });
            let rep = check_gradients(&spec, &x, &y, 1e-6).unwrap();
            assert_eq!(rep.parameter_count, 2 * 4 + 4 + 4 + 1);
            assert!(
                rep.max_rel_deviation < 1e-5,
                "{act:?}: {}",
                rep.max_rel_deviation
            );
        }
        assert_eq!(
            check_gradients(&ModelSpec::Ridge { lambda: 1.0 }, &x, &y, 1e-6),
            Err(FitError::NotMlp)
        );
    }

    #[test]
    fn fits_are_row_permutation_invariant() {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, -2.0]), 9);
        w.aleatoric = AleatoricSpec::gaussian(0.5);
        let w = build_world(w).unwrap();
        let b = sample(&w, 64, "perm").unwrap();
        let rev: Vec<usize> = (0..64).rev().collect();
        let p = b.subset(&rev);
        let grid = sample(&w, 20, "grid").unwrap();
        let specs = [
            ModelSpec::Ridge { lambda: 0.0 },
            ModelSpec::Knn {
                k: 5,
                distance: Distance::Euclidean,
            },
            ModelSpec::Mlp(MlpSpec {
                hidden: vec![3],
                epochs: 5,
                batch_size: 8,
                ..sin_spec()
            }),
        ];
        for s in &specs {
            let a = predict(&fit(s, &b.x_true, &b.y_true).unwrap(), &grid.x_true).unwrap();
            let c = predict(&fit(s, &p.x_true, &p.y_true).unwrap(), &grid.x_true).unwrap();
            assert_eq!(a, c, "{s:?}");
        }
    }

    #[test]
    fn too_few_rows_and_bad_specs_are_rejected() {
        let x = Matrix::zeros(2, 1);
        assert!(matches!(
            fit(
                &ModelSpec::Knn {
                    k: 3,
                    distance: Distance::Euclidean
                },
                &x,
                &[0.0, 1.0]
            ),
            Err(FitError::TooFewRows { needed: 3, got: 2 })
        ));
        assert!(matches!(
            fit(&ModelSpec::Ridge { lambda: -1.0 }, &x, &[0.0, 1.0]),
            Err(FitError::InvalidSpec { .. })
        ));
        assert!(matches!(
            fit(&ModelSpec::Ridge { lambda: 1.0 }, &x, &[0.0]),
            Err(FitError::DimensionMismatch(_))
        ));
        let m = fit(&ModelSpec::Ridge { lambda: 1.0 }, &x, &[0.0, 1.0]).unwrap();
        assert!(predict(&m, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = sin_data();
        for s in [
            ModelSpec::Ridge { lambda: 0.5 },
            ModelSpec::Knn {
                k: 3,
                distance: Distance::Manhattan,
            },
            ModelSpec::Mlp(MlpSpec {
                epochs: 2,
                ..sin_spec()
            }),
        ] {
            let m = fit(&s, &x, &y).unwrap();
            let text = m.to_json();
            assert!(text.contains("\"schema_version\": 1"));
            assert_eq!(FittedModel::from_json(&text).unwrap(), m);
        }
        let spec: ModelSpec = serde_json::from_str(r#"{"family":"knn","k":4}"#).unwrap();
        assert_eq!(
            spec,
            ModelSpec::Knn {
                k: 4,
                distance: Distance::Euclidean
            }
        );
    }

    #[test]
    fn noiseless_regimes_coincide() {
        let w = build_world(World::new(TrueFunctionSpec::linear(vec![0.5, 1.0]), 3)).unwrap();
        let b = sample(&w, 80, "train").unwrap();
        let grid = sample(&w, 30, "grid").unwrap();
        for s in [
            ModelSpec::Ridge { lambda: 0.2 },
            ModelSpec::Knn {
                k: 4,
                distance: Distance::Euclidean,
            },
        ] {
            let r = fit_regimes(&w, &b, &s).unwrap();
            assert!(r.is_complete());
            for i in 0..grid.len() {
                let p: Vec<f64> = [TrainingRegime::OO, TrainingRegime::TO, TrainingRegime::TT]
                    .iter()
                    .map(|&g| {
                        r.predict_row(g, grid.x_true.row(i), grid.x_observed.row(i))
                            .unwrap()
                    })
                    .collect();
                assert!((p[0] - p[1]).abs() <= 1e-9 && (p[1] - p[2]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn regime_errors_name_the_regime() {
        let w = build_world(World::new(TrueFunctionSpec::linear(vec![1.0]), 3)).unwrap();
        let b = sample(&w, 2, "t").unwrap();
        let e = fit_regimes(
            &w,
            &b,
            &ModelSpec::Knn {
                k: 5,
                distance: Distance::Euclidean,
            },
        )
        .unwrap_err();
        assert_eq!(e.regime, TrainingRegime::OO);
        assert!(e.to_string().starts_with("OO fit failed"));
    }
}
