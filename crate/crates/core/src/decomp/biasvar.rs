use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DecompError;
use crate::models::{
    fit, fit_regimes, FittedModel, ModelSpec, RegimeFitError, RegimeModels, TrainingRegime,
};
use crate::stats::{mean, std_error};
use crate::world::{sample, SampleBundle, World};

/// Moments of the four error terms pooled over every (replicate, test point)
/// cell, for the `OO` regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMoments {
    /// Order of the entries below.
    pub names: [String; 4],
    pub means: [f64; 4],
    /// Sample covariance matrix, row-major.
    pub covariance: [[f64; 4]; 4],
    /// Sample variance of the summed error.
    pub error_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub regime: TrainingRegime,
    pub replicate_count: usize,
    pub test_points: usize,
    pub n_train: usize,
    /// Mean of `(y_true - y_pred)^2` over replicates and test points.
    pub empirical_mse: f64,
    pub empirical_mse_se: f64,
    /// Grid mean of `E[y_pred] - (f*(x) + mean(ε))`.
    pub bias: f64,
    pub bias_se: f64,
    /// Grid mean of the squared bias, corrected for replicate noise.
    pub bias_squared: f64,
    /// Jackknife standard error; absent below three replicates.
    pub bias_squared_se: Option<f64>,
    /// Grid mean of the across-replicate prediction variance.
    pub variance: f64,
    pub variance_se: Option<f64>,
    /// Grid mean of the configured noise variance.
    pub aleatoric_variance: f64,
    /// Grid mean of the across-replicate variance of `y_true` at fixed `x`.
    pub aleatoric_variance_plug_in: f64,
    pub aleatoric_variance_plug_in_se: f64,
    /// `empirical_mse - (bias_squared + variance + aleatoric_variance)`.
    pub identity_gap: f64,
    pub identity_gap_se: f64,
    /// Noise mean, the constant term of the expected error.
    pub epsilon_mean: f64,
    pub components: Option<ComponentMoments>,
}

impl BiasVarianceReport {
    pub fn identity_gap_z(&self) -> f64 {
        crate::stats::z_score(self.identity_gap, self.identity_gap_se)
    }

    pub fn bias_z(&self) -> f64 {
        crate::stats::z_score(self.bias, self.bias_se)
    }
}

struct Replicate {
    preds: Vec<f64>,
    y: Vec<f64>,
    /// err_x, err_y, delta_f, aleatoric_term per test point
    components: Option<Vec<[f64; 4]>>,
}

fn predict_grid(model: &FittedModel, regime: TrainingRegime, grid: &SampleBundle) -> Vec<f64> {
    let x = if regime.uses_observed_features() {
        &grid.x_observed
    } else {
        &grid.x_true
    };
    x.iter_rows().map(|r| model.predict_row(r)).collect()
}

fn run_replicate(
    world: &World,
    spec: &ModelSpec,
    regime: TrainingRegime,
    n_train: usize,
    grid: &SampleBundle,
    f_star: &[f64],
    r: usize,
) -> Result<Replicate, DecompError> {
    let fit_failed = |source| DecompError::ReplicateFit {
        replicate: r,
        source,
    };
    let label = format!("biasvar/rep/{r}");
    let eps = world.draw_epsilon(&grid.x_true, &format!("{label}/test"));
    let y: Vec<f64> = f_star.iter().zip(&eps).map(|(f, e)| f + e).collect();
    if regime == TrainingRegime::Oracle {
        return Ok(Replicate {
            preds: f_star.to_vec(),
            y,
            components: None,
        });
    }
    let train = sample(world, n_train, &label).map_err(|source| DecompError::ReplicateSample {
        replicate: r,
        source,
    })?;
    if regime == TrainingRegime::OO {
        let models: RegimeModels = fit_regimes(world, &train, spec).map_err(fit_failed)?;
        let p = |g| predict_grid(models.get(g).expect("fit_regimes is complete"), g, grid);
        let (oo, to, tt) = (
            p(TrainingRegime::OO),
            p(TrainingRegime::TO),
            p(TrainingRegime::TT),
        );
        let components = (0..grid.len())
            .map(|j| {
                [
                    oo[j] - to[j],
                    to[j] - tt[j],
                    tt[j] - f_star[j],
                    f_star[j] - y[j],
                ]
            })
            .collect();
        return Ok(Replicate {
            preds: oo,
            y,
            components: Some(components),
        });
    }
    let rows = train.selected_rows();
    let ty = if regime == TrainingRegime::TT {
        &rows.y_true
    } else {
        &rows.y_observed
    };
    let model = fit(spec, &rows.x_true, ty)
        .map_err(|source| fit_failed(RegimeFitError { regime, source }))?;
    Ok(Replicate {
        preds: predict_grid(&model, regime, grid),
        y,
        components: None,
    })
}

/// Refits `spec` in `regime` on `n_replicates` fresh training samples and
/// decomposes the squared error on the fixed `test_grid`.
///
/// Replicate `r` trains on the `biasvar/rep/{r}` sample and scores against
/// fresh noise drawn at the grid points from `biasvar/rep/{r}/test`, so each
/// replicate is independent and the identity gap is a mean of i.i.d.
/// per-replicate terms. Replicates run in parallel and are reduced in index
/// order.
pub fn bias_variance_monte_carlo(
    world: &World,
    spec: &ModelSpec,
    regime: TrainingRegime,
    n_train: usize,
    n_replicates: usize,
    test_grid: &SampleBundle,
) -> Result<BiasVarianceReport, DecompError> {
    if n_replicates < 2 {
        return Err(DecompError::TooFewReplicates {
            needed: 2,
            got: n_replicates,
        });
    }
    if test_grid.is_empty() {
        return Err(DecompError::DimensionMismatch {
            what: "test grid rows",
            expected: 1,
            got: 0,
        });
    }
    if test_grid.x_true.cols() != world.input_dim() {
        return Err(DecompError::DimensionMismatch {
            what: "test grid columns",
            expected: world.input_dim(),
            got: test_grid.x_true.cols(),
        });
    }
    if regime != TrainingRegime::Oracle {
        spec.validate()?;
    }
    let f_star: Vec<f64> = test_grid
        .x_true
        .iter_rows()
        .map(|x| world.f_star.eval(x))
        .collect();
    // Collecting into a Result keeps the lowest failing replicate index.
    let reps: Vec<Replicate> = (0..n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(world, spec, regime, n_train, test_grid, &f_star, r))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    let rc = n_replicates;
    let m = test_grid.len();
    let (rf, mf) = (rc as f64, m as f64);
    let mu = world.aleatoric.mean;
    let sigma2: Vec<f64> = test_grid
        .x_true
        .iter_rows()
        .map(|x| world.aleatoric.variance_at(x))
        .collect();
    let centre: Vec<f64> = f_star.iter().map(|f| f + mu).collect();

    // Per-replicate grid means; each sequence is i.i.d. across replicates.
    let mut mse_r = Vec::with_capacity(rc);
    let mut bias_r = Vec::with_capacity(rc);
    let mut gap_r = Vec::with_capacity(rc);
    for rep in &reps {
        let (mut se, mut b, mut g) = (0.0, 0.0, 0.0);
        for j in 0..m {
            let (p, y, c) = (rep.preds[j], rep.y[j], centre[j]);
            se += (y - p) * (y - p);
            b += p - c;
            let eta = y - c;
            g += eta * eta - sigma2[j] + 2.0 * eta * (c - p);
        }
        mse_r.push(se / mf);
        bias_r.push(b / mf);
        gap_r.push(g / mf);
    }

    // Per-point replicate mean and centred sum of squares.
    let mut p_bar = vec![0.0; m];
    let mut y_bar = vec![0.0; m];
    for rep in &reps {
        for j in 0..m {
            p_bar[j] += rep.preds[j];
            y_bar[j] += rep.y[j];
        }
    }
    p_bar.iter_mut().for_each(|v| *v /= rf);
    y_bar.iter_mut().for_each(|v| *v /= rf);
    let mut p_ss = vec![0.0; m];
    let mut y_ss = vec![0.0; m];
    for rep in &reps {
        for j in 0..m {
            p_ss[j] += (rep.preds[j] - p_bar[j]).powi(2);
            y_ss[j] += (rep.y[j] - y_bar[j]).powi(2);
        }
    }

    let bias_sq_variance = |pb: &[f64], ss: &[f64], r: f64| -> (f64, f64) {
        let (mut bsq, mut var) = (0.0, 0.0);
        for j in 0..m {
            let s2 = ss[j] / (r - 1.0);
            bsq += (pb[j] - centre[j]).powi(2) - s2 / r;
            var += s2;
        }
        (bsq / mf, var / mf)
    };
    let (bias_squared, variance) = bias_sq_variance(&p_bar, &p_ss, rf);

    // Leave-one-replicate-out jackknife for the two non-linear estimators.
    let (bias_squared_se, variance_se) = if rc >= 3 {
        let mut loo_b = Vec::with_capacity(rc);
        let mut loo_v = Vec::with_capacity(rc);
        let mut pb = vec![0.0; m];
        let mut ss = vec![0.0; m];
        for rep in &reps {
            for j in 0..m {
                let dev = rep.preds[j] - p_bar[j];
                pb[j] = (rf * p_bar[j] - rep.preds[j]) / (rf - 1.0);
                ss[j] = (p_ss[j] - dev * dev * rf / (rf - 1.0)).max(0.0);
            }
            let (b, v) = bias_sq_variance(&pb, &ss, rf - 1.0);
            loo_b.push(b);
            loo_v.push(v);
        }
        (Some(jackknife_se(&loo_b)), Some(jackknife_se(&loo_v)))
    } else {
        (None, None)
    };

    let aleatoric_variance = mean(&sigma2);
    let plug_in_r: Vec<f64> = y_ss.iter().map(|s| s / (rf - 1.0)).collect();
    let aleatoric_variance_plug_in = mean(&plug_in_r);
    // Per-point variances are independent across the grid.
    let aleatoric_variance_plug_in_se = (0..m)
        .map(|j| {
            let m4 = reps
                .iter()
                .map(|rep| (rep.y[j] - y_bar[j]).powi(4))
                .sum::<f64>()
                / rf;
            let s2 = plug_in_r[j];
            ((m4 - s2 * s2) / rf).max(0.0)
        })
        .sum::<f64>()
        .sqrt()
        / mf;

    let empirical_mse = mean(&mse_r);
    let identity_gap = empirical_mse - (bias_squared + variance + aleatoric_variance);

    let components = reps[0].components.as_ref().map(|_| {
        let cells: Vec<[f64; 4]> = reps
            .iter()
            .flat_map(|rep| {
                rep.components
                    .as_ref()
                    .expect("all replicates share a regime")
                    .iter()
                    .copied()
            })
            .collect();
        component_moments(&cells)
    });

    Ok(BiasVarianceReport {
        regime,
        replicate_count: rc,
        test_points: m,
        n_train,
        empirical_mse,
        empirical_mse_se: std_error(&mse_r),
        bias: mean(&bias_r),
        bias_se: std_error(&bias_r),
        bias_squared,
        bias_squared_se,
        variance,
        variance_se,
        aleatoric_variance,
        aleatoric_variance_plug_in,
        aleatoric_variance_plug_in_se,
        identity_gap,
        identity_gap_se: std_error(&gap_r),
        epsilon_mean: mu,
        components,
    })
}

fn jackknife_se(loo: &[f64]) -> f64 {
    let n = loo.len() as f64;
    let m = mean(loo);
    ((n - 1.0) / n * loo.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt()
}

fn component_moments(cells: &[[f64; 4]]) -> ComponentMoments {
    let n = cells.len() as f64;
    let mut means = [0.0; 4];
    for c in cells {
        for k in 0..4 {
            means[k] += c[k];
        }
    }
    means.iter_mut().for_each(|v| *v /= n);
    let mut covariance = [[0.0; 4]; 4];
    for c in cells {
        for a in 0..4 {
            for b in 0..4 {
                covariance[a][b] += (c[a] - means[a]) * (c[b] - means[b]);
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    covariance.iter_mut().flatten().for_each(|v| *v /= denom);
    let totals: Vec<f64> = cells.iter().map(|c| c.iter().sum()).collect();
    ComponentMoments {
        names: ["err_x", "err_y", "delta_f", "aleatoric_term"].map(String::from),
        means,
        covariance,
        error_variance: crate::stats::sample_variance(&totals),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{
        build_world, AleatoricSpec, FeatureNoiseSpec, TargetNoiseSpec, TrueFunctionSpec,
    };

    fn linear_world(sigma2: f64) -> World {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, -1.0, 0.5]), 17);
        w.aleatoric = AleatoricSpec::gaussian(sigma2);
        build_world(w).unwrap()
    }

    #[test]
    fn degenerate_world_oracle_has_no_error() {
        let w = linear_world(0.0);
        let grid = sample(&w, 50, "grid").unwrap();
        let r =
            bias_variance_monte_carlo(&w, &ModelSpec::Oracle, TrainingRegime::Oracle, 10, 5, &grid)
                .unwrap();
        for v in [
            r.empirical_mse,
            r.bias,
            r.bias_squared,
            r.variance,
            r.identity_gap,
        ] {
            assert!(v.abs() < 1e-20, "{r:?}");
        }
    }

    #[test]
    fn ols_is_unbiased_and_identity_holds() {
        let w = linear_world(1.0);
        let grid = sample(&w, 100, "grid").unwrap();
        let r = bias_variance_monte_carlo(
            &w,
            &ModelSpec::Ridge { lambda: 0.0 },
            TrainingRegime::TT,
            50,
            200,
            &grid,
        )
        .unwrap();
        assert!(r.bias_z().abs() < 3.0, "bias z {}", r.bias_z());
        assert!(
            r.identity_gap_z().abs() < 3.0,
            "gap z {}",
            r.identity_gap_z()
        );
        assert!(r.variance > 0.0 && r.bias_squared_se.is_some());
        assert!((r.aleatoric_variance - 1.0).abs() < 1e-12);
        assert!((r.aleatoric_variance_plug_in - 1.0).abs() < 3.0 * r.aleatoric_variance_plug_in_se);
    }

    #[test]
    fn oo_regime_reports_component_moments() {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, 2.0]), 3);
        w.aleatoric = AleatoricSpec::gaussian(0.5);
        w.target_noise = TargetNoiseSpec::gaussian(0.0, 1.0);
        w.feature_noise = FeatureNoiseSpec::isotropic(2, 0.5);
        let w = build_world(w).unwrap();
        let grid = sample(&w, 40, "grid").unwrap();
        let r = bias_variance_monte_carlo(
            &w,
            &ModelSpec::Ridge { lambda: 0.1 },
            TrainingRegime::OO,
            60,
            30,
            &grid,
        )
        .unwrap();
        let c = r.components.unwrap();
        // Summed error is y_pred - y_true, so its variance matches the pooled MSE scale.
        let cov_sum: f64 = c.covariance.iter().flatten().sum();
        assert!((cov_sum - c.error_variance).abs() <= 1e-9 * c.error_variance);
        assert!(c.covariance[0][0] > 0.0);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let w = linear_world(1.0);
        let grid = sample(&w, 30, "grid").unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    bias_variance_monte_carlo(
                        &w,
                        &ModelSpec::Ridge { lambda: 0.5 },
                        TrainingRegime::TO,
                        20,
                        16,
                        &grid,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn replicate_failures_carry_their_index() {
        let w = linear_world(1.0);
        let grid = sample(&w, 5, "grid").unwrap();
        let e = bias_variance_monte_carlo(
            &w,
            &ModelSpec::Knn {
                k: 10,
                distance: Default::default(),
            },
            TrainingRegime::TT,
            4,
            3,
            &grid,
        )
        .unwrap_err();
        assert!(matches!(e, DecompError::ReplicateFit { replicate: 0, .. }));
    }
}
