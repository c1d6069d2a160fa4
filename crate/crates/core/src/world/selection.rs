use rand::Rng;

use super::sample::coverage_of;
use super::{SampleBundle, SelectionRule, SelectionScore, SelectionSpec, World, WorldError};

/// Flags the rows of `bundle` kept by `spec` and records the realized coverage.
///
/// * `threshold`: the `round(target_coverage * n)` rows with the lowest score
///   are kept; equal scores are ordered by row index.
/// * `probabilistic`: row `i` is kept with probability
///   `logistic(a - z_i)` where `z_i` is the standardized score and `a` is
///   calibrated by bisection so that the mean probability equals
///   `target_coverage`. A `random` score gives the flat probability
///   `target_coverage`.
///
/// Random draws come from the `label` substream of `world`.
pub fn apply_selection(
    world: &World,
    mut bundle: SampleBundle,
    spec: &SelectionSpec,
    label: &str,
) -> Result<SampleBundle, WorldError> {
    let n = bundle.len();
    if spec.rule == SelectionRule::None || n == 0 {
        bundle.selected = vec![true; n];
        bundle.coverage = coverage_of(&bundle.selected);
        return Ok(bundle);
    }

    let mut rng = world.rng(label);
    let scores: Vec<f64> = match spec.score {
        SelectionScore::Epsilon => bundle.epsilon.clone(),
        SelectionScore::YTrue => bundle.y_true.clone(),
        SelectionScore::Feature { index } => bundle.x_true.column(index),
        SelectionScore::Random => (0..n).map(|_| rng.random::<f64>()).collect(),
    };

    let c = spec.target_coverage;
    let selected = match spec.rule {
        SelectionRule::None => unreachable!(),
        SelectionRule::Threshold => {
            let keep = ((c * n as f64).round() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            let mut selected = vec![false; n];
            for &i in &order[..keep] {
                selected[i] = true;
            }
            selected
        }
        SelectionRule::Probabilistic => {
            let probs = if c >= 1.0 {
                vec![1.0; n]
            } else if spec.score == SelectionScore::Random {
                vec![c; n]
            } else {
                calibrated_probabilities(&scores, c)
            };
            probs.iter().map(|&p| rng.random::<f64>() < p).collect()
        }
    };

    if !selected.iter().any(|&s| s) {
        return Err(WorldError::EmptySelection { rows: n });
    }
    bundle.coverage = coverage_of(&selected);
    bundle.selected = selected;
    Ok(bundle)
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn calibrated_probabilities(scores: &[f64], coverage: f64) -> Vec<f64> {
    let m = crate::stats::mean(scores);
    let sd = crate::stats::sample_variance(scores).sqrt();
    if sd.is_nan() || sd <= 0.0 {
        return vec![coverage; scores.len()];
    }
    let z: Vec<f64> = scores.iter().map(|s| (s - m) / sd).collect();
    let mean_prob = |a: f64| z.iter().map(|zi| logistic(a - zi)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < coverage {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    z.iter().map(|zi| logistic(a - zi)).collect()
}
