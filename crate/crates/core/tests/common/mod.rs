#![allow(dead_code)]

use errdecomp::models::{Activation, InitScheme, MlpSpec, ModelSpec};
use errdecomp::world::{
    build_world, AleatoricShape, AleatoricSpec, FeatureNoiseSpec, FunctionFamily,
    HeteroskedasticLink, Interaction, SelectionRule, SelectionScore, SelectionSpec,
    TargetNoiseShape, TargetNoiseSpec, TrueFunctionSpec, World, XDistribution,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FAMILIES: [FunctionFamily; 4] = [
    FunctionFamily::Linear,
    FunctionFamily::Polynomial,
    FunctionFamily::Friedman,
    FunctionFamily::PiecewiseStep,
];

fn coef(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-2.0..2.0)
}

fn true_function(rng: &mut ChaCha8Rng, family: FunctionFamily) -> TrueFunctionSpec {
    let d = match family {
        FunctionFamily::Friedman => rng.random_range(5..=7),
        _ => rng.random_range(1..=5),
    };
    let mut f = TrueFunctionSpec::linear(vec![0.0; d]);
    f.family = family;
    f.coefficients = match family {
        FunctionFamily::Linear => (0..d).map(|_| coef(rng)).collect(),
        FunctionFamily::Polynomial => {
            let degree = rng.random_range(1..=3);
            f.degree = Some(degree);
            (0..1 + d * degree).map(|_| coef(rng) / 2.0).collect()
        }
        FunctionFamily::Friedman => vec![10.0, 20.0, 10.0, 5.0],
        FunctionFamily::PiecewiseStep => {
            let mut c = vec![coef(rng)];
            for _ in 0..d {
                c.push(rng.random_range(-1.0..1.0));
                c.push(coef(rng));
            }
            c
        }
    };
    if d >= 2 && rng.random_bool(0.3) {
        f.interactions.push(Interaction {
            i: 0,
            j: d - 1,
            weight: coef(rng),
        });
    }
    f
}

fn x_distribution(rng: &mut ChaCha8Rng, family: FunctionFamily, d: usize) -> XDistribution {
    if family == FunctionFamily::Friedman {
        return XDistribution::UniformBox {
            low: 0.0,
            high: 1.0,
        };
    }
    match rng.random_range(0..3) {
        0 => XDistribution::IidGaussian {
            mean: rng.random_range(-1.0..1.0),
            std: rng.random_range(0.5..2.0),
        },
        1 => XDistribution::UniformBox {
            low: -2.0,
            high: 2.0,
        },
        _ => {
            let a: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let covariance = (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            let dot: f64 = (0..d).map(|k| a[i][k] * a[j][k]).sum();
                            dot + if i == j { 0.2 } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            XDistribution::CorrelatedGaussian {
                mean: vec![0.0; d],
                covariance,
            }
        }
    }
}

fn aleatoric(rng: &mut ChaCha8Rng, d: usize) -> AleatoricSpec {
    let distribution = match rng.random_range(0..3) {
        0 => AleatoricShape::Gaussian,
        1 => AleatoricShape::StudentT {
            dof: rng.random_range(3.0..10.0),
        },
        _ => AleatoricShape::Mixture {
            weight: rng.random_range(0.05..0.3),
            scale_ratio: rng.random_range(2.0..5.0),
        },
    };
    let heteroskedastic = match rng.random_range(0..3) {
        0 => None,
        1 => Some(HeteroskedasticLink::Abs {
            feature: rng.random_range(0..d),
        }),
        _ => Some(HeteroskedasticLink::Exp {
            feature: rng.random_range(0..d),
            rate: rng.random_range(-0.5..0.5),
        }),
    };
    AleatoricSpec {
        distribution,
        mean: if rng.random_bool(0.3) {
            rng.random_range(-0.5..0.5)
        } else {
            0.0
        },
        variance: if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.01..2.0)
        },
        heteroskedastic,
    }
}

fn target_noise(rng: &mut ChaCha8Rng) -> TargetNoiseSpec {
    if rng.random_bool(0.2) {
        return TargetNoiseSpec::default();
    }
    let distribution = match rng.random_range(0..3) {
        0 => TargetNoiseShape::Gaussian,
        1 => TargetNoiseShape::Uniform,
        _ => TargetNoiseShape::Quantization {
            step: rng.random_range(0.1..1.0),
        },
    };
    TargetNoiseSpec {
        distribution,
        mean: rng.random_range(-0.5..0.5),
        variance: rng.random_range(0.0..3.0),
    }
}

fn feature_noise(rng: &mut ChaCha8Rng, d: usize) -> FeatureNoiseSpec {
    if rng.random_bool(0.2) {
        return FeatureNoiseSpec::default();
    }
    let mut f = FeatureNoiseSpec::isotropic(d, rng.random_range(0.0..1.0));
    f.means = (0..d).map(|_| rng.random_range(-0.3..0.3)).collect();
    if d > 1 && rng.random_bool(0.4) {
        f.omission_mask[rng.random_range(0..d)] = true;
    }
    if rng.random_bool(0.3) {
        f.coarsening = Some(
            (0..d)
                .map(|_| if rng.random_bool(0.5) { 0.5 } else { 0.0 })
                .collect(),
        );
    }
    f
}

fn selection(rng: &mut ChaCha8Rng, d: usize) -> SelectionSpec {
    let rule = match rng.random_range(0..3) {
        0 => return SelectionSpec::default(),
        1 => SelectionRule::Threshold,
        _ => SelectionRule::Probabilistic,
    };
    let score = match rng.random_range(0..4) {
        0 => SelectionScore::Epsilon,
        1 => SelectionScore::YTrue,
        2 => SelectionScore::Feature {
            index: rng.random_range(0..d),
        },
        _ => SelectionScore::Random,
    };
    SelectionSpec {
        rule,
        score,
        target_coverage: rng.random_range(0.6..1.0),
    }
}

/// A validated world with every corruption channel randomized.
pub fn random_world(rng: &mut ChaCha8Rng, family: FunctionFamily) -> World {
    let f = true_function(rng, family);
    let d = f.input_dim;
    let mut w = World::new(f, rng.random());
    w.x_distribution = x_distribution(rng, family, d);
    w.aleatoric = aleatoric(rng, d);
    w.target_noise = target_noise(rng);
    w.feature_noise = feature_noise(rng, d);
    w.selection = selection(rng, d);
    build_world(w).expect("generated world is valid")
}

/// A small trainable model of the given family index (0 ridge, 1 knn, 2 mlp).
/// Ridge keeps a positive penalty so coarsened or collinear columns stay solvable.
pub fn random_model(rng: &mut ChaCha8Rng, family: usize) -> ModelSpec {
    match family {
        0 => ModelSpec::Ridge {
            lambda: rng.random_range(0.01..2.0),
        },
        1 => ModelSpec::Knn {
            k: rng.random_range(1..=7),
            distance: Default::default(),
        },
        _ => ModelSpec::Mlp(MlpSpec {
            hidden: vec![rng.random_range(2..=6)],
            activation: if rng.random_bool(0.5) {
                Activation::Tanh
            } else {
                Activation::Sigmoid
            },
            learning_rate: 0.02,
            epochs: 15,
            batch_size: 16,
            init_seed: rng.random(),
            bias: true,
            init: InitScheme::UniformFanIn,
        }),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
