//! Per-row error decompositions, the bias–variance Monte Carlo, predictive
//! ceilings and the representativeness probe.

mod biasvar;
mod ceiling;

pub use biasvar::{bias_variance_monte_carlo, BiasVarianceReport, ComponentMoments};
pub use ceiling::{
    estimate_ceiling, representativeness_probe, CeilingEstimate, RepresentativenessReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{FitError, RegimeFitError, RegimeModels, TrainingRegime};
use crate::world::{SampleBundle, World, WorldError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompError {
    #[error("regime {0} missing from the fitted models")]
    MissingRegime(TrainingRegime),
    #[error("{what}: expected {expected} values, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} identity violated: sum {sum} vs {target} (relative error {rel:e})")]
    InvariantBreach {
        what: &'static str,
        sum: f64,
        target: f64,
        rel: f64,
    },
    #[error("replicate {replicate}: {source}")]
    ReplicateFit {
        replicate: usize,
        #[source]
        source: RegimeFitError,
    },
    #[error("replicate {replicate}: {source}")]
    ReplicateSample {
        replicate: usize,
        #[source]
        source: WorldError,
    },
    #[error("need at least {needed} replicates, got {got}")]
    TooFewReplicates { needed: usize, got: usize },
    #[error("{0} has zero variance")]
    DegenerateVariance(&'static str),
    #[error("the world has no selection rule to probe")]
    NoSelectionRule,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Tolerances for exact identities and Monte Carlo checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative tolerance of algebraic identities.
    pub identity_rel: f64,
    /// Number of standard errors allowed in statistical checks.
    pub z: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            identity_rel: 1e-9,
            z: 3.0,
        }
    }
}

/// One generated row as seen by the decompositions.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub x_true: &'a [f64],
    pub x_observed: &'a [f64],
    pub y_true: f64,
    pub epsilon: f64,
}

impl<'a> RowView<'a> {
    pub fn from_bundle(bundle: &'a SampleBundle, i: usize) -> Self {
        RowView {
            x_true: bundle.x_true.row(i),
            x_observed: bundle.x_observed.row(i),
            y_true: bundle.y_true[i],
            epsilon: bundle.epsilon[i],
        }
    }
}

/// `y_true` split into five telescoping terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseDecomposition {
    /// `f*(x_true) - f(x_true|y_true)`
    pub model_approx_gain: f64,
    /// `f(x_true|y_true) - f(x_true|y_observed)`
    pub meas_gain_y: f64,
    /// `f(x_true|y_observed) - f(x_observed|y_observed)`
    pub meas_gain_x: f64,
    /// `f(x_observed|y_observed)`
    pub current_prediction: f64,
    /// `ε`
    pub aleatoric: f64,
}

impl PointwiseDecomposition {
    pub fn total(&self) -> f64 {
        self.model_approx_gain
            + self.meas_gain_y
            + self.meas_gain_x
            + self.current_prediction
            + self.aleatoric
    }
}

/// Prediction error `y_pred - y_true` split into four terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// `f(x_observed|y_observed) - f(x_true|y_observed)`
    pub err_x: f64,
    /// `f(x_true|y_observed) - f(x_true|y_true)`
    pub err_y: f64,
    /// `f(x_true|y_true) - f*(x_true)`
    pub delta_f: f64,
    /// `f*(x_true) - y_true`, that is `-ε`.
    pub aleatoric_term: f64,
    pub y_pred: f64,
    pub y_true: f64,
}

impl ErrorDecomposition {
    pub fn total(&self) -> f64 {
        self.err_x + self.err_y + self.delta_f + self.aleatoric_term
    }
}

struct RegimeOutputs {
    oo: f64,
    to: f64,
    tt: f64,
    star: f64,
}

fn regime_outputs(
    world: &World,
    regimes: &RegimeModels,
    row: &RowView,
) -> Result<RegimeOutputs, DecompError> {
    if row.x_true.len() != world.input_dim() {
        return Err(DecompError::DimensionMismatch {
            what: "x_true",
            expected: world.input_dim(),
            got: row.x_true.len(),
        });
    }
    if row.x_observed.len() != world.observed_dim() {
        return Err(DecompError::DimensionMismatch {
            what: "x_observed",
            expected: world.observed_dim(),
            got: row.x_observed.len(),
        });
    }
    let out = |r| {
        regimes
            .predict_row(r, row.x_true, row.x_observed)
            .ok_or(DecompError::MissingRegime(r))
    };
    Ok(RegimeOutputs {
        oo: out(TrainingRegime::OO)?,
        to: out(TrainingRegime::TO)?,
        tt: out(TrainingRegime::TT)?,
        star: out(TrainingRegime::Oracle)?,
    })
}

/// Relative deviation of `sum` from `target`, scaled by the largest magnitude
/// involved (at least 1).
pub fn relative_deviation(sum: f64, target: f64, terms: &[f64]) -> f64 {
    let scale = terms
        .iter()
        .fold(1f64.max(target.abs()), |acc, t| acc.max(t.abs()));
    (sum - target).abs() / scale
}

fn check_identity(
    what: &'static str,
    sum: f64,
    target: f64,
    terms: &[f64],
    tol: f64,
) -> Result<(), DecompError> {
    let rel = relative_deviation(sum, target, terms);
    if rel <= tol {
        Ok(())
    } else {
        Err(DecompError::InvariantBreach {
            what,
            sum,
            target,
            rel,
        })
    }
}

pub fn decompose_pointwise(
    world: &World,
    regimes: &RegimeModels,
    row: &RowView,
) -> Result<PointwiseDecomposition, DecompError> {
    decompose_pointwise_with(world, regimes, row, &Tolerances::default())
}

pub fn decompose_pointwise_with(
    world: &World,
    regimes: &RegimeModels,
    row: &RowView,
    tol: &Tolerances,
) -> Result<PointwiseDecomposition, DecompError> {
    let o = regime_outputs(world, regimes, row)?;
    let d = PointwiseDecomposition {
        model_approx_gain: o.star - o.tt,
        meas_gain_y: o.tt - o.to,
        meas_gain_x: o.to - o.oo,
        current_prediction: o.oo,
        aleatoric: row.epsilon,
    };
    let terms = [
        d.model_approx_gain,
        d.meas_gain_y,
        d.meas_gain_x,
        d.current_prediction,
        d.aleatoric,
    ];
    check_identity(
        "telescoping",
        d.total(),
        row.y_true,
        &terms,
        tol.identity_rel,
    )?;
    Ok(d)
}

pub fn decompose_error(
    world: &World,
    regimes: &RegimeModels,
    row: &RowView,
) -> Result<ErrorDecomposition, DecompError> {
    decompose_error_with(world, regimes, row, &Tolerances::default())
}

pub fn decompose_error_with(
    world: &World,
    regimes: &RegimeModels,
    row: &RowView,
    tol: &Tolerances,
) -> Result<ErrorDecomposition, DecompError> {
    let o = regime_outputs(world, regimes, row)?;
    let d = ErrorDecomposition {
        err_x: o.oo - o.to,
        err_y: o.to - o.tt,
        delta_f: o.tt - o.star,
        aleatoric_term: o.star - row.y_true,
        y_pred: o.oo,
        y_true: row.y_true,
    };
    let terms = [d.err_x, d.err_y, d.delta_f, d.aleatoric_term];
    check_identity(
        "error decomposition",
        d.total(),
        d.y_pred - d.y_true,
        &terms,
        tol.identity_rel,
    )?;
    Ok(d)
}

/// Signed and absolute means of each pointwise component over a set of rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentMeans {
    pub rows: usize,
    pub model_approx_gain: f64,
    pub meas_gain_y: f64,
    pub meas_gain_x: f64,
    pub current_prediction: f64,
    pub aleatoric: f64,
    pub abs_model_approx_gain: f64,
    pub abs_meas_gain_y: f64,
    pub abs_meas_gain_x: f64,
    /// Mean squared error of the current (OO) prediction against `y_true`.
    pub mse: f64,
}

/// Decomposes every row of `grid` and averages the components.
pub fn component_means(
    world: &World,
    regimes: &RegimeModels,
    grid: &SampleBundle,
) -> Result<ComponentMeans, DecompError> {
    let n = grid.len();
    let mut m = ComponentMeans {
        rows: n,
        ..Default::default()
    };
    if n == 0 {
        return Ok(m);
    }
    for i in 0..n {
        let row = RowView::from_bundle(grid, i);
        let d = decompose_pointwise(world, regimes, &row)?;
        m.model_approx_gain += d.model_approx_gain;
        m.meas_gain_y += d.meas_gain_y;
        m.meas_gain_x += d.meas_gain_x;
        m.current_prediction += d.current_prediction;
        m.aleatoric += d.aleatoric;
        m.abs_model_approx_gain += d.model_approx_gain.abs();
        m.abs_meas_gain_y += d.meas_gain_y.abs();
        m.abs_meas_gain_x += d.meas_gain_x.abs();
        let r = d.current_prediction - row.y_true;
        m.mse += r * r;
    }
    let nf = n as f64;
    for v in [
        &mut m.model_approx_gain,
        &mut m.meas_gain_y,
        &mut m.meas_gain_x,
        &mut m.current_prediction,
        &mut m.aleatoric,
        &mut m.abs_model_approx_gain,
        &mut m.abs_meas_gain_y,
        &mut m.abs_meas_gain_x,
        &mut m.mse,
    ] {
        *v /= nf;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_regimes, ModelSpec};
    use crate::world::{
        build_world, sample, AleatoricSpec, FeatureNoiseSpec, TargetNoiseSpec, TrueFunctionSpec,
    };

    fn corrupted_world() -> World {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, -0.5, 2.0]), 21);
        w.aleatoric = AleatoricSpec::gaussian(0.5);
        w.target_noise = TargetNoiseSpec::gaussian(0.2, 1.0);
        w.feature_noise = FeatureNoiseSpec::isotropic(3, 0.3);
        build_world(w).unwrap()
    }

    #[test]
    fn noiseless_oracle_perfect_ridge_has_zero_epistemic_terms() {
        let w = build_world(World::new(TrueFunctionSpec::linear(vec![2.0, -1.0]), 1)).unwrap();
        let b = sample(&w, 40, "train").unwrap();
        let r = fit_regimes(&w, &b, &ModelSpec::Ridge { lambda: 0.0 }).unwrap();
        let grid = sample(&w, 25, "grid").unwrap();
        for i in 0..grid.len() {
            let row = RowView::from_bundle(&grid, i);
            let p = decompose_pointwise(&w, &r, &row).unwrap();
            for t in [p.model_approx_gain, p.meas_gain_y, p.meas_gain_x] {
                assert!(t.abs() <= 1e-9, "{p:?}");
            }
            assert_eq!(p.aleatoric, 0.0);
            assert!((p.current_prediction - row.y_true).abs() <= 1e-9);
            let e = decompose_error(&w, &r, &row).unwrap();
            for t in [e.err_x, e.err_y, e.delta_f, e.aleatoric_term] {
                assert!(t.abs() <= 1e-9, "{e:?}");
            }
        }
    }

    #[test]
    fn duality_is_exact_on_every_row() {
        let w = corrupted_world();
        let b = sample(&w, 60, "train").unwrap();
        let grid = sample(&w, 200, "grid").unwrap();
        for spec in [
            ModelSpec::Ridge { lambda: 0.3 },
            ModelSpec::Knn {
                k: 3,
                distance: Default::default(),
            },
        ] {
            let r = fit_regimes(&w, &b, &spec).unwrap();
            for i in 0..grid.len() {
                let row = RowView::from_bundle(&grid, i);
                let p = decompose_pointwise(&w, &r, &row).unwrap();
                let e = decompose_error(&w, &r, &row).unwrap();
                assert_eq!(e.err_x, -p.meas_gain_x);
                assert_eq!(e.err_y, -p.meas_gain_y);
                assert_eq!(e.delta_f, -p.model_approx_gain);
                assert!(
                    (e.aleatoric_term + row.epsilon).abs() <= 1e-12 * row.y_true.abs().max(1.0)
                );
            }
        }
    }

    #[test]
    fn mismatched_row_is_an_invariant_breach() {
        let w = corrupted_world();
        let b = sample(&w, 30, "train").unwrap();
        let r = fit_regimes(&w, &b, &ModelSpec::Ridge { lambda: 0.1 }).unwrap();
        let mut row = RowView::from_bundle(&b, 0);
        row.y_true += 1.0;
        assert!(matches!(
            decompose_pointwise(&w, &r, &row),
            Err(DecompError::InvariantBreach { .. })
        ));
    }

    #[test]
    fn missing_regime_and_bad_dimensions_are_reported() {
        let w = corrupted_world();
        let b = sample(&w, 30, "train").unwrap();
        let mut r = fit_regimes(&w, &b, &ModelSpec::Ridge { lambda: 0.1 }).unwrap();
        let short = [0.0; 2];
        let row = RowView {
            x_true: &short,
            ..RowView::from_bundle(&b, 0)
        };
        assert!(matches!(
            decompose_error(&w, &r, &row),
            Err(DecompError::DimensionMismatch { what: "x_true", .. })
        ));
        r.models.remove(&TrainingRegime::TO);
        assert_eq!(
            decompose_pointwise(&w, &r, &RowView::from_bundle(&b, 0)),
            Err(DecompError::MissingRegime(TrainingRegime::TO))
        );
    }

    #[test]
    fn target_noise_only_world_isolates_meas_gain_y() {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, 1.0, 1.0]), 8);
        w.aleatoric = AleatoricSpec::gaussian(0.25);
        w.target_noise = TargetNoiseSpec::gaussian(0.0, 4.0);
        let w = build_world(w).unwrap();
        let b = sample(&w, 100, "train").unwrap();
        let grid = sample(&w, 500, "grid").unwrap();
        let r = fit_regimes(&w, &b, &ModelSpec::Ridge { lambda: 0.0 }).unwrap();
        let m = component_means(&w, &r, &grid).unwrap();
        assert!(m.abs_meas_gain_x < 1e-6);
        assert!(m.abs_meas_gain_y > m.abs_model_approx_gain + m.abs_meas_gain_x);
    }
}
