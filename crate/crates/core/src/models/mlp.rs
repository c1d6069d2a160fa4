//! Fully connected regression network trained by plain mini-batch gradient
//! descent on mean squared error.
//!
//! Hidden layers apply the configured activation; the single output unit is
//! linear. Weights (and biases, when enabled) are initialised uniformly in
//! `±1/sqrt(fan_in)` from the `mlp/init` substream of `init_seed`; batch
//! order is reshuffled every epoch from the `mlp/shuffle` substream.
//! Training rows are first put in a canonical order, so two fits with equal
//! seeds on permuted copies of the data are bit-identical.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{canonical_row_order, FitError};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `±1/sqrt(fan_in)`.
    #[default]
    UniformFanIn,
    /// All parameters zero (useful for symmetry checks).
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Hidden layer widths; empty gives a linear model.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default)]
    pub init: InitScheme,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn init(spec: &MlpSpec, input_dim: usize) -> Network {
        let mut rng = rng::substream(spec.init_seed, "mlp/init");
        let mut widths = vec![input_dim];
        widths.extend(&spec.hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                let mut draw = |count: usize| -> Vec<f64> {
                    match spec.init {
                        InitScheme::UniformFanIn => (0..count)
                            .map(|_| rng.random_range(-bound..=bound))
                            .collect(),
                        InitScheme::Zeros => vec![0.0; count],
                    }
                };
                let weights = draw(inputs * outputs);
                let bias = spec.bias.then(|| draw(outputs));
                Layer {
                    inputs,
                    outputs,
                    weights,
                    bias,
                }
            })
            .collect();
        Network {
            activation: spec.activation,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.parameter_count());
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + n]);
            at += n;
            if let Some(b) = &mut l.bias {
                let n = b.len();
                b.copy_from_slice(&params[at..at + n]);
                at += n;
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let z = l.affine(&a);
            a = if li == last {
                z
            } else {
                z.into_iter().map(|v| self.activation.apply(v)).collect()
            };
        }
        a[0]
    }

    /// Mean squared error over `rows` of `(x, y)`.
    pub fn loss(&self, x: &Matrix, y: &[f64], rows: &[usize]) -> f64 {
        let m = rows.len() as f64;
        rows.iter()
            .map(|&i| {
                let r = self.predict_row(x.row(i)) - y[i];
                r * r
            })
            .sum::<f64>()
            / m
    }

    /// Loss and its analytic gradient (flattened like [`Self::parameters`])
    /// over `rows` by backpropagation.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[f64], rows: &[usize]) -> (f64, Vec<f64>) {
        let m = rows.len() as f64;
        let last = self.layers.len() - 1;
        let mut grads: Vec<(Vec<f64>, Option<Vec<f64>>)> = self
            .layers
            .iter()
            .map(|l| {
                (
                    vec![0.0; l.weights.len()],
                    l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                )
            })
            .collect();
        let mut loss = 0.0;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);

        for &i in rows {
            pre.clear();
            post.clear();
            post.push(x.row(i).to_vec());
            for (li, l) in self.layers.iter().enumerate() {
                let z = l.affine(&post[li]);
                let a = if li == last {
                    z.clone()
                } else {
                    z.iter().map(|&v| self.activation.apply(v)).collect()
                };
                pre.push(z);
                post.push(a);
            }
            let r = post[last + 1][0] - y[i];
            loss += r * r;

            let mut delta = vec![2.0 * r / m];
            for li in (0..=last).rev() {
                let l = &self.layers[li];
                let input = &post[li];
                let (gw, gb) = &mut grads[li];
                for (o, d) in delta.iter().enumerate() {
                    let row = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if let Some(gb) = gb {
                    for (g, d) in gb.iter_mut().zip(&delta) {
                        *g += d;
                    }
                }
                if li > 0 {
                    let mut back = vec![0.0; l.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        for (k, b) in back.iter_mut().enumerate() {
                            *b += l.weights[o * l.inputs + k] * d;
                        }
                    }
                    for (k, b) in back.iter_mut().enumerate() {
                        *b *= self.activation.derivative(pre[li - 1][k], post[li][k]);
                    }
                    delta = back;
                }
            }
        }

        let mut flat = Vec::with_capacity(self.parameter_count());
        for (gw, gb) in grads {
            flat.extend(gw);
            if let Some(gb) = gb {
                flat.extend(gb);
            }
        }
        (loss / m, flat)
    }
}

impl Layer {
    fn affine(&self, a: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let s: f64 = w.iter().zip(a).map(|(p, q)| p * q).sum();
                s + self.bias.as_ref().map_or(0.0, |b| b[o])
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub initial_loss: f64,
    /// Full training-set loss after each epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

pub fn train(spec: &MlpSpec, x: &Matrix, y: &[f64]) -> Result<(Network, TrainingTrace), FitError> {
    let mut net = Network::init(spec, x.cols());
    let order = canonical_row_order(x, y);
    let initial_loss = net.loss(x, y, &order);
    let mut shuffle = rng::substream(spec.init_seed, "mlp/shuffle");
    let mut perm = order.clone();
    let mut loss_history = Vec::with_capacity(spec.epochs);
    let mut steps = 0;
    let mut params = net.parameters();
    for epoch in 0..spec.epochs {
        perm.shuffle(&mut shuffle);
        for batch in perm.chunks(spec.batch_size) {
            let (_, grad) = net.loss_and_gradient(x, y, batch);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= spec.learning_rate * g;
            }
            net.set_parameters(&params);
            steps += 1;
        }
        let loss = net.loss(x, y, &order);
        if !loss.is_finite() {
            return Err(FitError::Diverged { epoch });
        }
        loss_history.push(loss);
    }
    Ok((
        net,
        TrainingTrace {
            initial_loss,
            loss_history,
            steps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(hidden: Vec<usize>) -> MlpSpec {
        MlpSpec {
            hidden,
            activation: Activation::Tanh,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 4,
            init_seed: 3,
            bias: true,
            init: InitScheme::UniformFanIn,
        }
    }

    #[test]
    fn init_respects_fan_in_bound_and_shapes() {
        let net = Network::init(&spec(vec![4, 3]), 2);
        assert_eq!(net.layers.len(), 3);
        assert_eq!(net.parameter_count(), (2 * 4 + 4) + (4 * 3 + 3) + (3 + 1));
        for l in &net.layers {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn parameter_round_trip() {
        let mut net = Network::init(&spec(vec![3]), 2);
        let p: Vec<f64> = (0..net.parameter_count()).map(|i| i as f64).collect();
        net.set_parameters(&p);
        assert_eq!(net.parameters(), p);
    }

    #[test]
    fn zero_init_without_bias_has_zero_gradient_at_zero_input() {
        let mut s = spec(vec![4]);
        s.bias = false;
        s.init = InitScheme::Zeros;
        let net = Network::init(&s, 2);
        let x = Matrix::zeros(5, 2);
        let y = [1.0, -2.0, 0.5, 3.0, 0.0];
        let (_, g) = net.loss_and_gradient(&x, &y, &[0, 1, 2, 3, 4]);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_gradient_is_least_squares_gradient() {
        let s = spec(vec![]);
        let net = Network::init(&s, 2);
        let x = Matrix::from_rows(&[
            vec![0.5, -1.0],
            vec![1.5, 2.0],
            vec![-0.3, 0.7],
            vec![2.2, -0.4],
        ]);
        let y = [1.0, -0.5, 0.25, 2.0];
        let rows = [0, 1, 2, 3];
        let (_, g) = net.loss_and_gradient(&x, &y, &rows);
        let w = &net.layers[0].weights;
        let b = net.layers[0].bias.as_ref().unwrap()[0];
        // d/dw (1/m) sum (x w + b - y)^2 = (2/m) Xᵀ r,  d/db = (2/m) sum r
        let m = 4.0;
        let r: Vec<f64> = (0..4)
            .map(|i| w[0] * x[(i, 0)] + w[1] * x[(i, 1)] + b - y[i])
            .collect();
        let gw0: f64 = (0..4).map(|i| 2.0 * r[i] / m * x[(i, 0)]).sum();
        let gw1: f64 = (0..4).map(|i| 2.0 * r[i] / m * x[(i, 1)]).sum();
        let gb: f64 = (0..4).map(|i| 2.0 * r[i] / m).sum();
        for (got, want) in g.iter().zip([gw0, gw1, gb]) {
            assert!(
                (got - want).abs() <= 1e-15 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let x = Matrix::from_rows(
            &(0..16)
                .map(|i| vec![i as f64 / 8.0 - 1.0])
                .collect::<Vec<_>>(),
        );
        let y: Vec<f64> = (0..16).map(|i| (i as f64 / 4.0).sin()).collect();
        let (a, ta) = train(&spec(vec![5]), &x, &y).unwrap();
        let (b, tb) = train(&spec(vec![5]), &x, &y).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }
}
