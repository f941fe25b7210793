//! Fully-connected tanh network with an exact reverse-mode gradient of the
//! Gaussian negative log-likelihood (constant term dropped).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par;

/// Columns processed per parallel work item when evaluating a batch.
pub const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weights: DMatrix::zeros(outputs, inputs), bias: DVector::zeros(outputs) }
    }
}

/// `tanh` on every hidden layer, identity on the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// All-zero network with layer widths `sizes` (input first, output last).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output size");
        Self { layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let (out, inp) = layer.weights.shape();
            let a = (6.0 / (inp + out) as f64).sqrt();
            layer.weights.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weights.nrows()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Parameters in a fixed order: per layer, weights (column-major) then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Network outputs for a batch whose columns are samples.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.activations(x).pop().unwrap()
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        self.forward(&DMatrix::from_column_slice(x.len(), 1, x)).as_slice().to_vec()
    }

    /// Input, every hidden activation and the output.
    fn activations(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Sum over samples of `‖f(x) − y‖² / (2σ²)` and its gradient.
    fn sum_loss_and_grad(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, sigma: f64) -> (f64, Mlp) {
        let acts = self.activations(x);
        let residual = acts.last().unwrap() - y;
        let scale = 1.0 / (sigma * sigma);
        let loss = 0.5 * scale * residual.norm_squared();

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = residual * scale;
        for i in (0..self.layers.len()).rev() {
            let gw = &delta * acts[i].transpose();
            let gb = delta.column_sum();
            grads.push(Layer { weights: gw, bias: gb });
            if i > 0 {
                let mut back = self.layers[i].weights.transpose() * &delta;
                back.zip_apply(&acts[i], |d, a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        grads.reverse();
        (loss, Mlp { layers: grads })
    }

    /// Mean-over-batch loss and its gradient. Columns are evaluated in
    /// fixed-size chunks (in parallel when enabled) and reduced in order.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, sigma: f64) -> (f64, Mlp) {
        let n = x.ncols();
        assert_eq!(n, y.ncols(), "input and target batch sizes differ");
        assert!(n > 0, "empty batch");
        let starts: Vec<usize> = (0..n).step_by(GRAD_CHUNK).collect();
        let parts = par::map(&starts, |&s| {
            let w = GRAD_CHUNK.min(n - s);
            self.sum_loss_and_grad(&x.columns(s, w).into_owned(), &y.columns(s, w).into_owned(), sigma)
        });
        let mut iter = parts.into_iter();
        let (mut loss, mut grad) = iter.next().unwrap();
        for (l, g) in iter {
            loss += l;
            grad.add_assign(&g);
        }
        grad.scale_mut(1.0 / n as f64);
        (loss / n as f64, grad)
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, sigma: f64) -> f64 {
        let r = self.forward(x) - y;
        0.5 * r.norm_squared() / (sigma * sigma) / x.ncols() as f64
    }

    fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    fn scale_mut(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights *= s;
            l.bias *= s;
        }
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &Mlp) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in net.params_mut().zip(grad.params()).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
