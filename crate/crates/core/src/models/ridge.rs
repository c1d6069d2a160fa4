use serde::{Deserialize, Serialize};

use super::{canonical_row_order, FitError};
use crate::linalg::{cholesky, cholesky_solve, FactorError, Matrix};

/// Closed-form ridge regression with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeParams {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// Solves `(Xcᵀ Xc + λ I) β = Xcᵀ yc` on centered data by Cholesky, with
/// `intercept = ȳ - x̄ᵀ β`.
///
/// Rows are accumulated in a canonical (lexicographic) order, so the result
/// is bit-identical under any permutation of the training rows.
pub fn fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeParams, FitError> {
    let (n, d) = (x.rows(), x.cols());
    let order = canonical_row_order(x, y);
    let nf = n as f64;

    let mut x_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for &i in &order {
        for (m, v) in x_mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
        y_mean += y[i];
    }
    x_mean.iter_mut().for_each(|m| *m /= nf);
    y_mean /= nf;

    let mut gram = Matrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    let mut xc = vec![0.0; d];
    for &i in &order {
        for (c, (v, m)) in xc.iter_mut().zip(x.row(i).iter().zip(&x_mean)) {
            *c = v - m;
        }
        let yc = y[i] - y_mean;
        for a in 0..d {
            rhs[a] += xc[a] * yc;
            for b in 0..=a {
                gram[(a, b)] += xc[a] * xc[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
        gram[(a, a)] += lambda;
    }

    let factor = cholesky(&gram, 1e-12).map_err(|e| match e {
        FactorError::Singular { pivot } => FitError::Singular { pivot, lambda },
        other => FitError::Numerical(format!("ridge normal equations: {other:?}")),
    })?;
    let coefficients = cholesky_solve(&factor, &rhs);
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&x_mean)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    Ok(RidgeParams {
        coefficients,
        intercept,
    })
}

impl RidgeParams {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }
}
