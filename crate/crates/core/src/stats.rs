//! Summary statistics used across the Monte Carlo routines.
//!
//! All reductions run sequentially in slice order so results are bit-stable.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator `n - 1`). NaN for fewer than 2 values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of a statistic from its per-observation influence values
/// (delta method): `sqrt(sum(psi^2)) / n`.
pub fn influence_std_error(psi: &[f64]) -> f64 {
    if psi.is_empty() {
        return f64::NAN;
    }
    psi.iter().map(|p| p * p).sum::<f64>().sqrt() / psi.len() as f64
}

/// Sample variance together with its large-sample standard error
/// `sqrt((m4 - s^4) / n)`.
pub fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let s2 = sample_variance(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (s2, ((m4 - s2 * s2).max(0.0) / n).sqrt())
}

/// z-score of `diff` given its standard error; zero when the standard error
/// vanishes (identical statistics).
pub fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 && se.is_finite() {
        diff / se
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_variance_by_hand() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((sample_variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!(sample_variance(&[1.0]).is_nan());
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn influence_se_matches_mean_se() {
        // For the mean, psi_i = x_i - mean; the delta-method SE is the
        // population-sd version of the classical SE.
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = mean(&xs);
        let psi: Vec<f64> = xs.iter().map(|x| x - m).collect();
        let n = xs.len() as f64;
        let classical = std_error(&xs) * ((n - 1.0) / n).sqrt();
        assert!((influence_std_error(&psi) - classical).abs() < 1e-14);
    }

    #[test]
    fn z_score_degenerate() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.5), 2.0);
    }
}
