//! Synthetic worlds with fully known ground truth.
//!
//! A [`World`] fixes the true function `f*`, the distribution of `x_true`,
//! the aleatoric noise ε, the target and feature corruption channels and an
//! optional selection mechanism. Sampling produces aligned true and observed
//! columns, see [`sample`].

mod sample;
mod selection;
mod spec;

pub use sample::{sample, SampleBundle};
pub use selection::apply_selection;
pub use spec::{
    AleatoricShape, AleatoricSpec, FeatureNoiseSpec, FunctionFamily, HeteroskedasticLink,
    Interaction, SelectionRule, SelectionScore, SelectionSpec, TargetNoiseShape, TargetNoiseSpec,
    TrueFunctionSpec, XDistribution,
};

use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{psd_factor, FactorError, Matrix};
use crate::rng::{self, SeedLedger, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid world spec: {field}: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("dimension mismatch: expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("selection kept zero of {rows} rows")]
    EmptySelection { rows: usize },
}

fn invalid(field: &str, reason: impl Into<String>) -> WorldError {
    WorldError::InvalidSpec {
        field: field.to_owned(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub f_star: TrueFunctionSpec,
    #[serde(default)]
    pub x_distribution: XDistribution,
    #[serde(default)]
    pub aleatoric: AleatoricSpec,
    #[serde(default)]
    pub target_noise: TargetNoiseSpec,
    #[serde(default)]
    pub feature_noise: FeatureNoiseSpec,
    #[serde(default)]
    pub selection: SelectionSpec,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(skip)]
    ledger: SeedLedger,
}

impl World {
    /// A noiseless world around `f_star` with standard Gaussian inputs.
    /// Call [`build_world`] on the result (after adjusting fields) to validate.
    pub fn new(f_star: TrueFunctionSpec, master_seed: u64) -> Self {
        Self {
            f_star,
            x_distribution: XDistribution::default(),
            aleatoric: AleatoricSpec::default(),
            target_noise: TargetNoiseSpec::default(),
            feature_noise: FeatureNoiseSpec::default(),
            selection: SelectionSpec::default(),
            master_seed,
            ledger: SeedLedger::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.f_star.input_dim
    }

    /// Number of columns in the observed feature view.
    pub fn observed_dim(&self) -> usize {
        self.feature_noise.observed_features().len()
    }

    /// Records every substream label this world (and its clones) consumes.
    pub fn attach_ledger(&mut self, ledger: SeedLedger) {
        self.ledger = ledger;
    }

    pub fn ledger(&self) -> &SeedLedger {
        &self.ledger
    }

    /// Generator for the substream `label` of this world's master seed.
    pub fn rng(&self, label: &str) -> StreamRng {
        self.ledger.record(label);
        rng::substream(self.master_seed, label)
    }

    /// Draws ε for each row of `x_true` from the `label` substream.
    pub fn draw_epsilon(&self, x_true: &Matrix, label: &str) -> Vec<f64> {
        let mut rng = self.rng(label);
        let spec = &self.aleatoric;
        x_true
            .iter_rows()
            .map(|x| {
                let z = unit_aleatoric_draw(&spec.distribution, &mut rng);
                spec.mean + spec.variance_at(x).sqrt() * z
            })
            .collect()
    }

    /// Same world with the target and feature error draws scaled by
    /// `target` and `features` (factors in `[0, 1]`). Scaling shrinks means
    /// and standard deviations together; quantization steps, omission and
    /// coarsening are unchanged. Paired substreams keep the underlying
    /// standardized draws identical across fidelities.
    pub fn with_fidelity(&self, target: f64, features: f64) -> World {
        let mut w = self.clone();
        w.target_noise.mean *= target;
        w.target_noise.variance *= target * target;
        for m in &mut w.feature_noise.means {
            *m *= features;
        }
        for row in &mut w.feature_noise.covariance {
            for v in row {
                *v *= features * features;
            }
        }
        w
    }

    /// Same world with every feature outside `keep` additionally omitted
    /// from the observed view.
    pub fn restricted_to(&self, keep: &[usize]) -> World {
        let mut w = self.clone();
        for (j, omit) in w.feature_noise.omission_mask.iter_mut().enumerate() {
            if !keep.contains(&j) {
                *omit = true;
            }
        }
        w
    }

    fn validate(&self) -> Result<(), WorldError> {
        validate_f_star(&self.f_star)?;
        let d = self.input_dim();
        validate_x_distribution(&self.x_distribution, d)?;
        validate_aleatoric(&self.aleatoric, d)?;
        validate_target_noise(&self.target_noise)?;
        validate_feature_noise(&self.feature_noise, d)?;
        validate_selection(&self.selection, d)
    }
}

/// Fills defaults that depend on the input dimension and checks every
/// invariant, naming the first violated one.
pub fn build_world(mut config: World) -> Result<World, WorldError> {
    let d = config.f_star.input_dim;
    if d == 0 {
        return Err(invalid("f_star.input_dim", "must be at least 1"));
    }
    let fnoise = &mut config.feature_noise;
    if fnoise.means.is_empty() {
        fnoise.means = vec![0.0; d];
    }
    if fnoise.covariance.is_empty() {
        fnoise.covariance = vec![vec![0.0; d]; d];
    }
    if fnoise.omission_mask.is_empty() {
        fnoise.omission_mask = vec![false; d];
    }
    config.validate()?;
    Ok(config)
}

/// `f*(x)` without noise.
pub fn eval_true_function(world: &World, x: &[f64]) -> Result<f64, WorldError> {
    if x.len() != world.input_dim() {
        return Err(WorldError::DimensionMismatch {
            expected: world.input_dim(),
            got: x.len(),
        });
    }
    Ok(world.f_star.eval(x))
}

pub(crate) fn unit_aleatoric_draw(shape: &AleatoricShape, rng: &mut StreamRng) -> f64 {
    match *shape {
        AleatoricShape::Gaussian => StandardNormal.sample(rng),
        AleatoricShape::StudentT { dof } => {
            let t: f64 = StudentT::new(dof).expect("validated dof").sample(rng);
            t * ((dof - 2.0) / dof).sqrt()
        }
        AleatoricShape::Mixture {
            weight,
            scale_ratio,
        } => {
            let base = 1.0 / ((1.0 - weight) + weight * scale_ratio * scale_ratio).sqrt();
            let u: f64 = rand::Rng::random(rng);
            let z: f64 = StandardNormal.sample(rng);
            if u < weight {
                z * base * scale_ratio
            } else {
                z * base
            }
        }
    }
}

pub(crate) fn covariance_factor(rows: &[Vec<f64>], field: &str) -> Result<Matrix, WorldError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(invalid(field, "must be a square matrix"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    psd_factor(&Matrix::from_rows(rows), 1e-12).map_err(|e| match e {
        FactorError::NotSymmetric => invalid(field, "must be symmetric"),
        FactorError::Indefinite { pivot, value } => invalid(
            field,
            format!("not positive-semidefinite (factorization pivot {pivot} = {value:e})"),
        ),
        _ => invalid(field, "factorization failed"),
    })
}

fn finite(v: f64, field: &str) -> Result<(), WorldError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must be finite"))
    }
}

fn validate_f_star(f: &TrueFunctionSpec) -> Result<(), WorldError> {
    let d = f.input_dim;
    match f.family {
        FunctionFamily::Polynomial => match f.degree {
            None => {
                return Err(invalid(
                    "f_star.degree",
                    "required for the polynomial family",
                ))
            }
            Some(0) => return Err(invalid("f_star.degree", "must be at least 1")),
            Some(_) => {}
        },
        _ if f.degree.is_some() => {
            return Err(invalid(
                "f_star.degree",
                "only valid for the polynomial family",
            ))
        }
        FunctionFamily::Friedman if d < 5 => {
            return Err(invalid(
                "f_star.input_dim",
                "friedman family needs at least 5 inputs",
            ))
        }
        _ => {}
    }
    let expected = f.expected_coefficients().unwrap_or(0);
    if f.coefficients.len() != expected {
        return Err(invalid(
            "f_star.coefficients",
            format!(
                "{:?} family with input_dim {d} needs {expected} coefficients, got {}",
                f.family,
                f.coefficients.len()
            ),
        ));
    }
    for &c in &f.coefficients {
        finite(c, "f_star.coefficients")?;
    }
    for t in &f.interactions {
        if t.i >= d || t.j >= d {
            return Err(invalid("f_star.interactions", "feature index out of range"));
        }
        finite(t.weight, "f_star.interactions")?;
    }
    Ok(())
}

fn validate_x_distribution(x: &XDistribution, d: usize) -> Result<(), WorldError> {
    match x {
        XDistribution::IidGaussian { mean, std } => {
            finite(*mean, "x_distribution.mean")?;
            if !(std.is_finite() && *std >= 0.0) {
                return Err(invalid("x_distribution.std", "must be finite and >= 0"));
            }
        }
        XDistribution::UniformBox { low, high } => {
            if !(low.is_finite() && high.is_finite() && low < high) {
                return Err(invalid(
                    "x_distribution",
                    "uniform box needs finite low < high",
                ));
            }
        }
        XDistribution::CorrelatedGaussian { mean, covariance } => {
            if !mean.is_empty() && mean.len() != d {
                return Err(invalid(
                    "x_distribution.mean",
                    "length must equal input_dim",
                ));
            }
            for &m in mean {
                finite(m, "x_distribution.mean")?;
            }
            if covariance.len() != d {
                return Err(invalid(
                    "x_distribution.covariance",
                    "must be input_dim x input_dim",
                ));
            }
            covariance_factor(covariance, "x_distribution.covariance")?;
        }
    }
    Ok(())
}

fn validate_aleatoric(a: &AleatoricSpec, d: usize) -> Result<(), WorldError> {
    finite(a.mean, "aleatoric.mean")?;
    if !(a.variance.is_finite() && a.variance >= 0.0) {
        return Err(invalid("aleatoric.variance", "must be finite and >= 0"));
    }
    match a.distribution {
        AleatoricShape::Gaussian => {}
        AleatoricShape::StudentT { dof } => {
            if !(dof.is_finite() && dof > 2.0) {
                return Err(invalid(
                    "aleatoric.distribution.dof",
                    "must exceed 2 for finite variance",
                ));
            }
        }
        AleatoricShape::Mixture {
            weight,
            scale_ratio,
        } => {
            if !(0.0..=1.0).contains(&weight) {
                return Err(invalid(
                    "aleatoric.distribution.weight",
                    "must lie in [0, 1]",
                ));
            }
            if !(scale_ratio.is_finite() && scale_ratio > 0.0) {
                return Err(invalid("aleatoric.distribution.scale_ratio", "must be > 0"));
            }
        }
    }
    if let Some(link) = &a.heteroskedastic {
        let feature = match *link {
            HeteroskedasticLink::Abs { feature } => feature,
            HeteroskedasticLink::Exp { feature, rate } => {
                finite(rate, "aleatoric.heteroskedastic.rate")?;
                feature
            }
        };
        if feature >= d {
            return Err(invalid(
                "aleatoric.heteroskedastic.feature",
                "index out of range",
            ));
        }
    }
    Ok(())
}

fn validate_target_noise(t: &TargetNoiseSpec) -> Result<(), WorldError> {
    finite(t.mean, "target_noise.mean")?;
    if !(t.variance.is_finite() && t.variance >= 0.0) {
        return Err(invalid("target_noise.variance", "must be finite and >= 0"));
    }
    if let TargetNoiseShape::Quantization { step } = t.distribution {
        if !(step.is_finite() && step > 0.0) {
            return Err(invalid("target_noise.distribution.step", "must be > 0"));
        }
    }
    Ok(())
}

fn validate_feature_noise(f: &FeatureNoiseSpec, d: usize) -> Result<(), WorldError> {
    if f.means.len() != d {
        return Err(invalid(
            "feature_noise.means",
            "length must equal input_dim",
        ));
    }
    for &m in &f.means {
        finite(m, "feature_noise.means")?;
    }
    if f.covariance.len() != d {
        return Err(invalid(
            "feature_noise.covariance",
            "must be input_dim x input_dim",
        ));
    }
    covariance_factor(&f.covariance, "feature_noise.covariance")?;
    if f.omission_mask.len() != d {
        return Err(invalid(
            "feature_noise.omission_mask",
            "length must equal input_dim",
        ));
    }
    if f.omission_mask.iter().all(|&o| o) {
        return Err(invalid(
            "feature_noise.omission_mask",
            "at least one feature must remain observed",
        ));
    }
    if let Some(steps) = &f.coarsening {
        if steps.len() != d {
            return Err(invalid(
                "feature_noise.coarsening",
                "length must equal input_dim",
            ));
        }
        if steps.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid(
                "feature_noise.coarsening",
                "steps must be finite and >= 0",
            ));
        }
    }
    Ok(())
}

fn validate_selection(s: &SelectionSpec, d: usize) -> Result<(), WorldError> {
    if !(s.target_coverage > 0.0 && s.target_coverage <= 1.0) {
        return Err(invalid("selection.target_coverage", "must lie in (0, 1]"));
    }
    if let SelectionScore::Feature { index } = s.score {
        if index >= d {
            return Err(invalid(
                "selection.score.index",
                "feature index out of range",
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_world(coefs: Vec<f64>) -> World {
        build_world(World::new(TrueFunctionSpec::linear(coefs), 1)).unwrap()
    }

    #[test]
    fn noiseless_linear_world_builds_with_defaults() {
        let w = linear_world(vec![2.0]);
        assert_eq!(w.aleatoric.variance, 0.0);
        assert_eq!(w.feature_noise.means, vec![0.0]);
        assert_eq!(w.feature_noise.omission_mask, vec![false]);
        assert_eq!(w.observed_dim(), 1);
    }

    #[test]
    fn linear_eval_by_hand() {
        let w = linear_world(vec![2.0, -1.0]);
        assert_eq!(eval_true_function(&w, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(
            eval_true_function(&w, &[1.0]),
            Err(WorldError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn piecewise_step_is_right_continuous() {
        let f = TrueFunctionSpec {
            family: FunctionFamily::PiecewiseStep,
            input_dim: 1,
            coefficients: vec![1.0, 0.5, 2.0],
            degree: None,
            interactions: vec![],
        };
        assert_eq!(f.eval(&[0.4999]), 1.0);
        assert_eq!(f.eval(&[0.5]), 3.0);
        assert_eq!(f.eval(&[0.7]), 3.0);
    }

    #[test]
    fn friedman_matches_independent_formula() {
        let f = TrueFunctionSpec {
            family: FunctionFamily::Friedman,
            input_dim: 6,
            coefficients: vec![10.0, 20.0, 10.0, 5.0],
            degree: None,
            interactions: vec![],
        };
        let x = [0.3, 0.8, 0.1, 0.6, 0.9, 0.42];
        // Classic Friedman #1, written out independently.
        let reference = 10.0 * (std::f64::consts::PI * 0.3 * 0.8).sin()
            + 20.0 * (0.1f64 - 0.5).powi(2)
            + 10.0 * 0.6
            + 5.0 * 0.9;
        assert!((f.eval(&x) - reference).abs() < 1e-12);
    }

    #[test]
    fn polynomial_with_interaction() {
        // 1 + (2 x0 + 3 x0^2) + (-1 x1 + 0.5 x1^2) + 4 x0 x1
        let f = TrueFunctionSpec {
            family: FunctionFamily::Polynomial,
            input_dim: 2,
            coefficients: vec![1.0, 2.0, 3.0, -1.0, 0.5],
            degree: Some(2),
            interactions: vec![Interaction {
                i: 0,
                j: 1,
                weight: 4.0,
            }],
        };
        let (x0, x1) = (1.5, -2.0);
        let want = 1.0 + 2.0 * x0 + 3.0 * x0 * x0 - x1 + 0.5 * x1 * x1 + 4.0 * x0 * x1;
        assert_eq!(f.eval(&[x0, x1]), want);
    }

    #[test]
    fn rejects_non_psd_feature_covariance() {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, 1.0]), 0);
        w.feature_noise.covariance = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let err = build_world(w).unwrap_err();
        match err {
            WorldError::InvalidSpec { field, reason } => {
                assert_eq!(field, "feature_noise.covariance");
                assert!(reason.contains("positive-semidefinite"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_coefficient_count() {
        let mut f = TrueFunctionSpec::linear(vec![1.0, 2.0]);
        f.input_dim = 3;
        let err = build_world(World::new(f, 0)).unwrap_err();
        assert!(
            matches!(err, WorldError::InvalidSpec { ref field, .. } if field == "f_star.coefficients")
        );
    }

    #[test]
    fn rejects_all_features_omitted() {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, 1.0]), 0);
        w.feature_noise.omission_mask = vec![true, true];
        assert!(build_world(w).is_err());
    }

    #[test]
    fn rejects_bad_noise_parameters() {
        let base = World::new(TrueFunctionSpec::linear(vec![1.0]), 0);
        let mut w = base.clone();
        w.aleatoric.variance = -1.0;
        assert!(build_world(w).is_err());
        let mut w = base.clone();
        w.target_noise.distribution = TargetNoiseShape::Quantization { step: 0.0 };
        assert!(build_world(w).is_err());
        let mut w = base.clone();
        w.aleatoric.distribution = AleatoricShape::StudentT { dof: 2.0 };
        assert!(build_world(w).is_err());
        let mut w = base.clone();
        w.selection.target_coverage = 0.0;
        assert!(build_world(w).is_err());
        let mut w = base;
        w.f_star.family = FunctionFamily::Friedman;
        w.f_star.coefficients = vec![1.0; 4];
        assert!(build_world(w).is_err());
    }

    #[test]
    fn fidelity_scales_noise() {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, 1.0]), 0);
        w.target_noise = TargetNoiseSpec::gaussian(0.4, 4.0);
        w.feature_noise = FeatureNoiseSpec::isotropic(2, 2.0);
        let w = build_world(w).unwrap();
        let half = w.with_fidelity(0.5, 0.0);
        assert_eq!(half.target_noise.mean, 0.2);
        assert_eq!(half.target_noise.variance, 1.0);
        assert!(half
            .feature_noise
            .covariance
            .iter()
            .flatten()
            .all(|&v| v == 0.0));
    }
}
