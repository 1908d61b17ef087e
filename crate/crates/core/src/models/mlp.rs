//! Fully connected network with a softmax output, trained on cross-entropy
//! plus an L2 weight penalty with mini-batch Adam or momentum SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Activation, LearningRateSchedule, MlpParams, Solver};
use super::softmax;
use crate::data::{Features, N_FEATURES};

pub const BATCH_SIZE: usize = 32;
pub const MAX_EPOCHS: usize = 500;
pub const TOL: f64 = 1e-5;
pub const N_ITER_NO_CHANGE: usize = 20;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MOMENTUM: f64 = 0.9;

/// Dense layer; `weights` is row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
                self.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

fn activate(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
    }
}

/// Derivative expressed through the activation output.
fn activate_grad(a: Activation, out: f64) -> f64 {
    match a {
        Activation::Relu => {
            if out > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - out * out,
    }
}

impl Mlp {
    /// Glorot-uniform initialization of weights and biases.
    pub fn new(hidden: &[usize], n_classes: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![N_FEATURES];
        sizes.extend_from_slice(hidden);
        sizes.push(n_classes);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: (0..n_out).map(|_| rng.random_range(-bound..bound)).collect(),
                }
            })
            .collect();
        Self { activation, layers }
    }

    /// Activations of every layer, input first; the last entry is the
    /// pre-softmax output.
    fn forward_all(&self, z: &Features) -> Vec<Vec<f64>> {
        let mut acts = vec![z.to_vec()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(acts.last().expect("input present"));
            if l < last {
                out.iter_mut().for_each(|v| *v = activate(self.activation, *v));
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, z: &Features) -> Vec<f64> {
        self.forward_all(z).pop().expect("output layer")
    }

    pub fn predict_proba(&self, z: &Features) -> Vec<f64> {
        softmax(&self.logits(z))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer (weights, then biases).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    /// Batch objective `mean(cross-entropy) + alpha / (2 * batch) * |W|^2`
    /// and its gradient in [`Mlp::flat_params`] layout.
    pub fn loss_and_gradient(&self, batch: &[(Features, usize)], alpha: f64) -> (f64, Vec<f64>) {
        let m = batch.len() as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut loss = 0.0;
        for (z, label) in batch {
            let acts = self.forward_all(z);
            let logits = acts.last().expect("output");
            let p = softmax(logits);
            loss += super::log_softmax_loss(logits, *label);
            let mut delta: Vec<f64> = p;
            delta[*label] -= 1.0;
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = &acts[l];
                let (gw, gb) = &mut grads[l];
                for o in 0..layer.n_out {
                    gb[o] += delta[o];
                    let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += delta[o] * x;
                    }
                }
                if l > 0 {
                    delta = (0..layer.n_in)
                        .map(|i| {
                            let back: f64 = (0..layer.n_out)
                                .map(|o| layer.weights[o * layer.n_in + i] * delta[o])
                                .sum();
                            back * activate_grad(self.activation, input[i])
                        })
                        .collect();
                }
            }
        }
        let mut penalty = 0.0;
        let mut flat = Vec::with_capacity(self.n_params());
        for (layer, (gw, gb)) in self.layers.iter().zip(grads) {
            penalty += layer.weights.iter().map(|w| w * w).sum::<f64>();
            flat.extend(gw.iter().zip(&layer.weights).map(|(g, w)| (g + alpha * w) / m));
            flat.extend(gb.iter().map(|g| g / m));
        }
        (loss / m + 0.5 * alpha * penalty / m, flat)
    }

    /// Trains on standardized inputs; returns the network and the mean batch
    /// loss of every epoch.
    pub fn fit(z: &[Features], y: &[usize], n_classes: usize, params: &MlpParams, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&params.hidden_layer_sizes, n_classes, params.activation, &mut rng);
        let data: Vec<(Features, usize)> = z.iter().copied().zip(y.iter().copied()).collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut theta = net.flat_params();
        let mut m1 = vec![0.0; theta.len()];
        let mut m2 = vec![0.0; theta.len()];
        let mut step = 0i32;
        let mut lr = params.learning_rate_init;
        let mut best = f64::INFINITY;
        let mut stall = 0;
        let mut history = Vec::new();
        let mut batch = Vec::with_capacity(BATCH_SIZE);
        for _ in 0..MAX_EPOCHS {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(BATCH_SIZE) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| data[i]));
                net.set_flat_params(&theta);
                let (loss, grad) = net.loss_and_gradient(&batch, params.alpha);
                epoch_loss += loss * chunk.len() as f64;
                match params.solver {
                    Solver::Adam => {
                        step += 1;
                        let c1 = 1.0 - BETA1.powi(step);
                        let c2 = 1.0 - BETA2.powi(step);
                        let rate = lr * c2.sqrt() / c1;
                        for i in 0..theta.len() {
                            m1[i] = BETA1 * m1[i] + (1.0 - BETA1) * grad[i];
                            m2[i] = BETA2 * m2[i] + (1.0 - BETA2) * grad[i] * grad[i];
                            theta[i] -= rate * m1[i] / (m2[i].sqrt() + ADAM_EPS);
                        }
                    }
                    Solver::Sgd => {
                        for i in 0..theta.len() {
                            m1[i] = MOMENTUM * m1[i] - lr * grad[i];
                            theta[i] += m1[i];
                        }
                    }
                }
            }
            let epoch_loss = epoch_loss / data.len() as f64;
            history.push(epoch_loss);
            if epoch_loss > best - TOL {
                stall += 1;
            } else {
                stall = 0;
            }
            best = best.min(epoch_loss);
            if stall >= N_ITER_NO_CHANGE {
                let adaptive = params.solver == Solver::Sgd
                    && params.learning_rate == LearningRateSchedule::Adaptive;
                if adaptive && lr > 1e-6 {
                    lr /= 5.0;
                    stall = 0;
                } else {
                    break;
                }
            }
        }
        net.set_flat_params(&theta);
        (net, history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<(Features, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..12)
            .map(|i| {
                let x: Features = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                (x, i % 3)
            })
            .collect()
    }

    fn check_gradient(activation: Activation) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[5, 4], 3, activation, &mut rng);
        let batch = toy();
        let alpha = 0.3;
        let (_, analytic) = net.loss_and_gradient(&batch, alpha);
        let theta = net.flat_params();
        let h = 1e-5;
        let mut probe = net.clone();
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            probe.set_flat_params(&plus);
            let lp = probe.loss_and_gradient(&batch, alpha).0;
            let mut minus = theta.clone();
            minus[i] -= h;
            probe.set_flat_params(&minus);
            let lm = probe.loss_and_gradient(&batch, alpha).0;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-8);
            assert!(rel < 1e-4 || (numeric - analytic[i]).abs() < 1e-9, "param {i}: {numeric} vs {}", analytic[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences_tanh() {
        check_gradient(Activation::Tanh);
    }

    #[test]
    fn gradients_match_finite_differences_relu() {
        check_gradient(Activation::Relu);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[3], 2, Activation::Relu, &mut rng);
        let flat: Vec<f64> = (0..net.n_params()).map(|i| i as f64).collect();
        net.set_flat_params(&flat);
        assert_eq!(net.flat_params(), flat);
    }
}
