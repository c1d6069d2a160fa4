//! Decomposed learning curves along nested information axes, panel
//! variants, the low/high-noise gallery and channel isolation checks.

mod isolation;
mod panels;

pub use isolation::{isolation_check, Channel, ComponentShift, IsolationReport};
pub use panels::{
    regime_gallery, run_panel_scenarios, run_panel_scenarios_with, GalleryConfig, GalleryEntry,
    GalleryResult, PanelCurve, PanelResults, PanelScenario, PanelVariant, TerminalRow,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{component_means, ComponentMeans, DecompError};
use crate::models::{fit_regimes, ModelSpec, RegimeFitError};
use crate::stats::{mean, sample_variance};
use crate::world::{sample, SampleBundle, World, WorldError};

/// Normal quantile used for confidence half-widths.
pub const Z_95: f64 = 1.96;

pub const DEFAULT_TEST_POINTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("information axis: level {level}: {reason}")]
    InvalidAxis { level: usize, reason: String },
    #[error("scenario {scenario}: {reason}")]
    InvalidScenario { scenario: String, reason: String },
    #[error("level {level}, replicate {replicate}: {source}")]
    Fit {
        level: usize,
        replicate: usize,
        #[source]
        source: RegimeFitError,
    },
    #[error("level {level}, replicate {replicate}: {source}")]
    Cell {
        level: usize,
        replicate: usize,
        #[source]
        source: DecompError,
    },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
}

/// One rung of an information axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisLevel {
    pub n_train: usize,
    /// True-feature indices offered to the observed view; `None` keeps all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<usize>>,
    /// Scale on the target error draws, in `[0, 1]`.
    #[serde(default = "one")]
    pub target_fidelity: f64,
    /// Scale on the feature error draws, in `[0, 1]`.
    #[serde(default = "one")]
    pub feature_fidelity: f64,
}

fn one() -> f64 {
    1.0
}

impl AxisLevel {
    pub fn with_n(n_train: usize) -> Self {
        AxisLevel {
            n_train,
            features: None,
            target_fidelity: 1.0,
            feature_fidelity: 1.0,
        }
    }

    /// The world seen at this level.
    pub fn world(&self, base: &World) -> World {
        let w = match &self.features {
            Some(keep) => base.restricted_to(keep),
            None => base.clone(),
        };
        w.with_fidelity(self.target_fidelity, self.feature_fidelity)
    }
}

/// Ordered levels, each carrying at least as much information as the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AxisLevel>", into = "Vec<AxisLevel>")]
pub struct InformationAxis {
    levels: Vec<AxisLevel>,
}

impl TryFrom<Vec<AxisLevel>> for InformationAxis {
    type Error = ExperimentError;

    fn try_from(levels: Vec<AxisLevel>) -> Result<Self, Self::Error> {
        InformationAxis::new(levels)
    }
}

impl From<InformationAxis> for Vec<AxisLevel> {
    fn from(a: InformationAxis) -> Self {
        a.levels
    }
}

impl InformationAxis {
    /// Rejects empty axes and levels that are not nested: `n_train` must not
    /// decrease, feature sets must not shrink and fidelity factors must not
    /// increase.
    pub fn new(levels: Vec<AxisLevel>) -> Result<Self, ExperimentError> {
        let bad = |level, reason: &str| {
            Err(ExperimentError::InvalidAxis {
                level,
                reason: reason.to_owned(),
            })
        };
        if levels.is_empty() {
            return bad(0, "axis has no levels");
        }
        for (i, l) in levels.iter().enumerate() {
            if l.n_train == 0 {
                return bad(i, "n_train must be positive");
            }
            for f in [l.target_fidelity, l.feature_fidelity] {
                if !(0.0..=1.0).contains(&f) {
                    return bad(i, "fidelity factors must lie in [0, 1]");
                }
            }
            if i == 0 {
                continue;
            }
            let p = &levels[i - 1];
            if l.n_train < p.n_train {
                return bad(i, "n_train decreases");
            }
            if l.target_fidelity > p.target_fidelity || l.feature_fidelity > p.feature_fidelity {
                return bad(i, "fidelity factor increases");
            }
            match (&p.features, &l.features) {
                (None, Some(_)) => return bad(i, "feature set shrinks"),
                (Some(prev), Some(cur)) if !prev.iter().all(|j| cur.contains(j)) => {
                    return bad(i, "feature set shrinks")
                }
                _ => {}
            }
        }
        Ok(InformationAxis { levels })
    }

    pub fn levels(&self) -> &[AxisLevel] {
        &self.levels
    }

    /// Checks feature indices against the world's input dimension.
    pub fn validate_for(&self, world: &World) -> Result<(), ExperimentError> {
        let d = world.input_dim();
        for (i, l) in self.levels.iter().enumerate() {
            if l.features.iter().flatten().any(|&j| j >= d) {
                return Err(ExperimentError::InvalidAxis {
                    level: i,
                    reason: format!("feature index out of range for input_dim {d}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub level_index: usize,
    pub n_train: usize,
    pub mean_mse: f64,
    pub mse_sd: f64,
    /// `Z_95 * sd / sqrt(replicates)`
    pub ci_half_width: f64,
    /// `1 - mean_mse / Var(y_true)` on the test grid.
    pub performance: f64,
    /// Replicate averages of the per-grid component means.
    pub components: ComponentMeans,
    /// Held-out MSE of each replicate, in replicate order.
    pub replicate_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub replicates: usize,
    pub test_points: usize,
    pub points: Vec<LearningCurvePoint>,
}

impl LearningCurve {
    /// Levels `i + 1` whose mean exceeds level `i`'s by more than the sum of
    /// both half-widths.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        self.points
            .windows(2)
            .filter(|w| w[1].mean_mse > w[0].mean_mse + w[0].ci_half_width + w[1].ci_half_width)
            .map(|w| w[1].level_index)
            .collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.monotonicity_violations().is_empty()
    }

    pub fn terminal(&self) -> &LearningCurvePoint {
        self.points.last().expect("curves have at least one level")
    }
}

/// Held-out grid for `world`: `m` rows from the shared `curve/test` label.
pub fn test_grid(world: &World, m: usize) -> Result<SampleBundle, WorldError> {
    sample(world, m, "curve/test")
}

/// Runs every (level, replicate) cell: replicate `r` trains on the first
/// `n_train` rows of the `curve/rep/{r}` sample of the level's world, fits
/// all regimes and decomposes the shared test grid. Cells run in parallel
/// and are aggregated in (level, replicate) order.
pub fn run_learning_curve(
    world: &World,
    spec: &ModelSpec,
    axis: &InformationAxis,
    replicates: usize,
) -> Result<LearningCurve, ExperimentError> {
    run_learning_curve_with(world, spec, axis, replicates, DEFAULT_TEST_POINTS)
}

pub fn run_learning_curve_with(
    world: &World,
    spec: &ModelSpec,
    axis: &InformationAxis,
    replicates: usize,
    test_points: usize,
) -> Result<LearningCurve, ExperimentError> {
    if replicates < 2 {
        return Err(ExperimentError::InvalidScenario {
            scenario: "learning curve".into(),
            reason: "need at least 2 replicates".into(),
        });
    }
    axis.validate_for(world)?;
    spec.validate().map_err(DecompError::from)?;
    let worlds: Vec<World> = axis.levels().iter().map(|l| l.world(world)).collect();
    let grids = worlds
        .iter()
        .map(|w| test_grid(w, test_points))
        .collect::<Result<Vec<_>, _>>()?;

    let cells: Vec<(usize, usize)> = (0..worlds.len())
        .flat_map(|l| (0..replicates).map(move |r| (l, r)))
        .collect();
    let results: Vec<ComponentMeans> = cells
        .par_iter()
        .map(|&(level, replicate)| {
            let w = &worlds[level];
            let n = axis.levels()[level].n_train;
            let train = sample(w, n, &format!("curve/rep/{replicate}")).map_err(|e| {
                ExperimentError::Cell {
                    level,
                    replicate,
                    source: e.into(),
                }
            })?;
            let models = fit_regimes(w, &train, spec).map_err(|source| ExperimentError::Fit {
                level,
                replicate,
                source,
            })?;
            component_means(w, &models, &grids[level]).map_err(|source| ExperimentError::Cell {
                level,
                replicate,
                source,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    let points = results
        .chunks(replicates)
        .enumerate()
        .map(|(level, reps)| aggregate(level, axis.levels()[level].n_train, reps, &grids[level]))
        .collect();
    Ok(LearningCurve {
        replicates,
        test_points,
        points,
    })
}

fn aggregate(
    level: usize,
    n_train: usize,
    reps: &[ComponentMeans],
    grid: &SampleBundle,
) -> LearningCurvePoint {
    let rf = reps.len() as f64;
    let replicate_mse: Vec<f64> = reps.iter().map(|c| c.mse).collect();
    let mean_mse = mean(&replicate_mse);
    let mse_sd = sample_variance(&replicate_mse).sqrt();
    let avg = |f: fn(&ComponentMeans) -> f64| reps.iter().map(f).sum::<f64>() / rf;
    let components = ComponentMeans {
        rows: reps[0].rows,
        model_approx_gain: avg(|c| c.model_approx_gain),
        meas_gain_y: avg(|c| c.meas_gain_y),
        meas_gain_x: avg(|c| c.meas_gain_x),
        current_prediction: avg(|c| c.current_prediction),
        aleatoric: avg(|c| c.aleatoric),
        abs_model_approx_gain: avg(|c| c.abs_model_approx_gain),
        abs_meas_gain_y: avg(|c| c.abs_meas_gain_y),
        abs_meas_gain_x: avg(|c| c.abs_meas_gain_x),
        mse: mean_mse,
    };
    let var_y = sample_variance(&grid.y_true);
    LearningCurvePoint {
        level_index: level,
        n_train,
        mean_mse,
        mse_sd,
        ci_half_width: Z_95 * mse_sd / rf.sqrt(),
        performance: if var_y > 0.0 {
            1.0 - mean_mse / var_y
        } else {
            f64::NAN
        },
        components,
        replicate_mse,
    }
}
