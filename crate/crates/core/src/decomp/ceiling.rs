use serde::{Deserialize, Serialize};

use super::DecompError;
use crate::stats::{influence_std_error, mean, variance_with_se, z_score};
use crate::world::{sample, SelectionRule, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingEstimate {
    pub rows: usize,
    /// Sample variance of the generated noise draws.
    pub sigma_eps_sq: f64,
    pub sigma_eps_sq_se: f64,
    /// Best attainable MSE, equal to `sigma_eps_sq`.
    pub ceiling_mse: f64,
    /// `1 - sigma_eps_sq / Var(y_true)`.
    pub ceiling_r2: f64,
    pub ceiling_r2_se: f64,
    pub var_y_true: f64,
}

/// Predictive ceiling estimated from `n` generated rows (label `ceiling`).
pub fn estimate_ceiling(world: &World, n: usize) -> Result<CeilingEstimate, DecompError> {
    if n < 2 {
        return Err(DecompError::DimensionMismatch {
            what: "ceiling rows",
            expected: 2,
            got: n,
        });
    }
    let b = sample(world, n, "ceiling")?;
    let (a, a_se) = variance_with_se(&b.epsilon);
    let (v, _) = variance_with_se(&b.y_true);
    if v.is_nan() || v <= 0.0 {
        return Err(DecompError::DegenerateVariance("y_true"));
    }
    let (me, my) = (mean(&b.epsilon), mean(&b.y_true));
    // Delta method on the ratio of the two variances.
    let psi: Vec<f64> = b
        .epsilon
        .iter()
        .zip(&b.y_true)
        .map(|(e, y)| {
            let ia = (e - me).powi(2) - a;
            let iv = (y - my).powi(2) - v;
            -(ia / v - a * iv / (v * v))
        })
        .collect();
    Ok(CeilingEstimate {
        rows: n,
        sigma_eps_sq: a,
        sigma_eps_sq_se: a_se,
        ceiling_mse: a,
        ceiling_r2: 1.0 - a / v,
        ceiling_r2_se: influence_std_error(&psi),
        var_y_true: v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativenessReport {
    pub rows: usize,
    pub coverage: f64,
    pub eps_mean_full: f64,
    pub eps_mean_selected: f64,
    pub eps_var_full: f64,
    pub eps_var_selected: f64,
    /// `(selected - full)` over its standard error, for the mean.
    pub mean_divergence_z: f64,
    /// Same for the variance.
    pub var_divergence_z: f64,
}

/// Draws `n` rows (label `probe`), applies the world's selection rule and
/// compares the moments of `ε` on the selected rows with the full sample.
///
/// Standard errors of the selected-minus-full differences come from the
/// influence functions of both estimators, which accounts for the overlap
/// between the two row sets and for the random selected count.
pub fn representativeness_probe(
    world: &World,
    n: usize,
) -> Result<RepresentativenessReport, DecompError> {
    if world.selection.rule == SelectionRule::None {
        return Err(DecompError::NoSelectionRule);
    }
    let b = sample(world, n, "probe")?;
    let eps = &b.epsilon;
    let kept: Vec<f64> = b.selected_indices().iter().map(|&i| eps[i]).collect();
    let p = b.coverage;
    let (m_full, m_sel) = (mean(eps), mean(&kept));
    let var =
        |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    let (v_full, v_sel) = (var(eps, m_full), var(&kept, m_sel));

    let mut psi_mean = Vec::with_capacity(n);
    let mut psi_var = Vec::with_capacity(n);
    for (e, &s) in eps.iter().zip(&b.selected) {
        let (dm_sel, dv_sel) = if s {
            ((e - m_sel) / p, ((e - m_sel).powi(2) - v_sel) / p)
        } else {
            (0.0, 0.0)
        };
        psi_mean.push(dm_sel - (e - m_full));
        psi_var.push(dv_sel - ((e - m_full).powi(2) - v_full));
    }
    Ok(RepresentativenessReport {
        rows: n,
        coverage: p,
        eps_mean_full: m_full,
        eps_mean_selected: m_sel,
        eps_var_full: v_full,
        eps_var_selected: v_sel,
        mean_divergence_z: z_score(m_sel - m_full, influence_std_error(&psi_mean)),
        var_divergence_z: z_score(v_sel - v_full, influence_std_error(&psi_var)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{
        build_world, AleatoricSpec, SelectionScore, SelectionSpec, TrueFunctionSpec, XDistribution,
    };

    fn world(coefs: Vec<f64>, sigma2: f64) -> World {
        let mut w = World::new(TrueFunctionSpec::linear(coefs), 31);
        w.aleatoric = AleatoricSpec::gaussian(sigma2);
        w
    }

    #[test]
    fn noiseless_world_has_unit_ceiling() {
        let c = estimate_ceiling(&build_world(world(vec![1.0, 1.0], 0.0)).unwrap(), 1000).unwrap();
        assert_eq!(c.ceiling_r2, 1.0);
        assert_eq!(c.ceiling_mse, 0.0);
    }

    #[test]
    fn constant_function_has_zero_ceiling() {
        let c = estimate_ceiling(&build_world(world(vec![0.0, 0.0], 2.0)).unwrap(), 5000).unwrap();
        assert!(c.ceiling_r2.abs() < 1e-12, "{}", c.ceiling_r2);
    }

    #[test]
    fn constant_function_without_noise_is_degenerate() {
        let w = build_world(world(vec![0.0], 0.0)).unwrap();
        assert_eq!(
            estimate_ceiling(&w, 100),
            Err(DecompError::DegenerateVariance("y_true"))
        );
    }

    #[test]
    fn three_to_one_signal_gives_three_quarters() {
        // Var(f*) = 1 + 1 + 1 = 3 under standard normal inputs.
        let mut w = world(vec![1.0, 1.0, 1.0], 1.0);
        w.x_distribution = XDistribution::IidGaussian {
            mean: 0.0,
            std: 1.0,
        };
        let c = estimate_ceiling(&build_world(w).unwrap(), 100_000).unwrap();
        assert!((c.ceiling_r2 - 0.75).abs() < 0.02, "{}", c.ceiling_r2);
        assert!(c.ceiling_r2_se > 0.0 && c.ceiling_r2_se < 0.01);
    }

    fn probe_world(score: SelectionScore, rule: SelectionRule, coverage: f64) -> World {
        let mut w = world(vec![1.0, -1.0], 1.0);
        w.selection = SelectionSpec {
            rule,
            score,
            target_coverage: coverage,
        };
        build_world(w).unwrap()
    }

    #[test]
    fn selection_on_epsilon_shrinks_variance() {
        let w = probe_world(SelectionScore::Epsilon, SelectionRule::Threshold, 0.7);
        let r = representativeness_probe(&w, 20_000).unwrap();
        assert!(r.var_divergence_z < -3.0, "{r:?}");
        assert!(r.eps_var_selected < r.eps_var_full);
    }

    #[test]
    fn independent_selection_is_representative() {
        let w = probe_world(SelectionScore::Random, SelectionRule::Probabilistic, 0.7);
        let r = representativeness_probe(&w, 20_000).unwrap();
        assert!(
            r.mean_divergence_z.abs() < 3.0 && r.var_divergence_z.abs() < 3.0,
            "{r:?}"
        );
    }

    #[test]
    fn full_coverage_matches_exactly() {
        let w = probe_world(SelectionScore::Epsilon, SelectionRule::Threshold, 1.0);
        let r = representativeness_probe(&w, 500).unwrap();
        assert_eq!(r.eps_mean_full, r.eps_mean_selected);
        assert_eq!(r.eps_var_full, r.eps_var_selected);
        assert_eq!((r.mean_divergence_z, r.var_divergence_z), (0.0, 0.0));
    }

    #[test]
    fn probe_needs_a_selection_rule() {
        let w = build_world(world(vec![1.0], 1.0)).unwrap();
        assert_eq!(
            representativeness_probe(&w, 10),
            Err(DecompError::NoSelectionRule)
        );
    }
}
