use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::decomp::{component_means, ComponentMeans};
use crate::models::{fit_regimes, ModelSpec};
use crate::stats::{mean, std_error, z_score};
use crate::world::{build_world, sample, TargetNoiseSpec, World};

/// A measurement-error channel that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Feature error, omission and coarsening: `x_observed == x_true`.
    Features,
    /// Target error: `y_observed == y_true`.
    Target,
}

impl Channel {
    /// `world` with this channel removed.
    pub fn switch_off(self, world: &World) -> World {
        let mut w = world.clone();
        let d = w.input_dim();
        match self {
            Channel::Features => {
                let f = &mut w.feature_noise;
                f.means = vec![0.0; d];
                f.covariance = vec![vec![0.0; d]; d];
                f.omission_mask = vec![false; d];
                f.coarsening = None;
            }
            Channel::Target => w.target_noise = TargetNoiseSpec::gaussian(0.0, 0.0),
        }
        w
    }
}

/// Paired change in one component's grid mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentShift {
    pub component: String,
    pub mean_on: f64,
    pub mean_off: f64,
    /// Mean over replicates of `off - on`.
    pub diff: f64,
    pub diff_se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationReport {
    pub channel: Channel,
    pub replicates: usize,
    /// Mean absolute value of the matching component with the channel off.
    pub switched_off_abs_mean: f64,
    /// Components expected to stay put, compared pairwise.
    pub others: Vec<ComponentShift>,
}

impl IsolationReport {
    /// Largest `|z|` among the other components.
    pub fn max_other_z(&self) -> f64 {
        self.others.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

/// Fits every regime on the `isolation/rep/{r}` sample of `world` and of
/// `world` with `channel` switched off (identical substream labels), and
/// compares component means on the shared `isolation/test` grid.
pub fn isolation_check(
    world: &World,
    spec: &ModelSpec,
    channel: Channel,
    n_train: usize,
    replicates: usize,
    test_points: usize,
) -> Result<IsolationReport, ExperimentError> {
    if replicates < 2 {
        return Err(ExperimentError::InvalidScenario {
            scenario: "isolation".into(),
            reason: "need at least 2 replicates".into(),
        });
    }
    let off = build_world(channel.switch_off(world))?;
    let grid_on = sample(world, test_points, "isolation/test")?;
    let grid_off = sample(&off, test_points, "isolation/test")?;
    let cell = |w: &World, grid, r: usize| -> Result<ComponentMeans, ExperimentError> {
        let train = sample(w, n_train, &format!("isolation/rep/{r}"))?;
        let models = fit_regimes(w, &train, spec).map_err(|source| ExperimentError::Fit {
            level: 0,
            replicate: r,
            source,
        })?;
        Ok(component_means(w, &models, grid)?)
    };
    let pairs: Vec<(ComponentMeans, ComponentMeans)> = (0..replicates)
        .into_par_iter()
        .map(|r| Ok((cell(world, &grid_on, r)?, cell(&off, &grid_off, r)?)))
        .collect::<Vec<Result<_, ExperimentError>>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    type Pick = fn(&ComponentMeans) -> f64;
    let (target_abs, others): (Pick, Vec<(&str, Pick)>) = match channel {
        Channel::Features => (
            |c| c.abs_meas_gain_x,
            vec![
                ("model_approx_gain", |c| c.model_approx_gain),
                ("meas_gain_y", |c| c.meas_gain_y),
                ("current_prediction", |c| c.current_prediction),
            ],
        ),
        Channel::Target => (
            |c| c.abs_meas_gain_y,
            vec![
                ("model_approx_gain", |c| c.model_approx_gain),
                ("meas_gain_x", |c| c.meas_gain_x),
                ("current_prediction", |c| c.current_prediction),
            ],
        ),
    };
    let switched_off_abs_mean = mean(&pairs.iter().map(|(_, o)| target_abs(o)).collect::<Vec<_>>());
    let others = others
        .into_iter()
        .map(|(name, pick)| {
            let on: Vec<f64> = pairs.iter().map(|(a, _)| pick(a)).collect();
            let offv: Vec<f64> = pairs.iter().map(|(_, b)| pick(b)).collect();
            let d: Vec<f64> = offv.iter().zip(&on).map(|(b, a)| b - a).collect();
            let (diff, diff_se) = (mean(&d), std_error(&d));
            ComponentShift {
                component: name.to_owned(),
                mean_on: mean(&on),
                mean_off: mean(&offv),
                diff,
                diff_se,
                // A constant nonzero shift has no spread but is still a shift.
                z: if diff_se == 0.0 && diff != 0.0 {
                    f64::INFINITY
                } else {
                    z_score(diff, diff_se)
                },
            }
        })
        .collect();
    Ok(IsolationReport {
        channel,
        replicates,
        switched_off_abs_mean,
        others,
    })
}
