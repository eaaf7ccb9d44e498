use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor2};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// ELU with alpha = 1.
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Elu => {
                if pre > 0.0 {
                    1.0
                } else {
                    pre.exp()
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Glorot-uniform initialization: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor2 {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut t = Tensor2::zeros(rows, cols);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..=limit);
    }
    t
}

/// Fully connected layer `y = act(x·W + b)` with `W` stored as in×out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor2,
    pub bias: Tensor2,
    pub activation: Activation,
}

/// Values saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub pre: Tensor2,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            weights: glorot_uniform(in_dim, out_dim, rng),
            bias: Tensor2::zeros(1, out_dim),
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor2::zeros(in_dim, out_dim),
            bias: Tensor2::zeros(1, out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn forward(&self, input: &Tensor2) -> Result<Tensor2> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, input: &Tensor2) -> Result<(Tensor2, DenseCache)> {
        if input.cols() != self.in_dim() {
            return Err(shape_err!(
                "dense layer expects {} input columns, got {}",
                self.in_dim(),
                input.cols()
            ));
        }
        let mut pre = input.matmul(&self.weights)?;
        let b = self.bias.data();
        for r in 0..pre.rows() {
            for (v, bj) in pre.row_mut(r).iter_mut().zip(b) {
                *v += bj;
            }
        }
        let out = pre.map(|v| self.activation.apply(v));
        Ok((out, DenseCache { pre }))
    }

    /// Accumulates parameter gradients into `grads` and returns dL/d(input).
    pub fn backward(
        &self,
        input: &Tensor2,
        cache: &DenseCache,
        grad_out: &Tensor2,
        grads: &mut DenseLayer,
    ) -> Result<Tensor2> {
        if grad_out.shape() != cache.pre.shape() {
            return Err(shape_err!(
                "dense backward: gradient {:?} vs output {:?}",
                grad_out.shape(),
                cache.pre.shape()
            ));
        }
        let mut delta = grad_out.clone();
        if self.activation != Activation::Identity {
            for (d, &p) in delta.data_mut().iter_mut().zip(cache.pre.data()) {
                *d *= self.activation.derivative(p);
            }
        }
        grads.weights.add_assign(&input.matmul_tn(&delta)?);
        for (g, s) in grads.bias.data_mut().iter_mut().zip(delta.column_sums()) {
            *g += s;
        }
        delta.matmul_nt(&self.weights)
    }
}

impl ParamSet for DenseLayer {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor2)) {
        f("weights", &self.weights);
        f("bias", &self.bias);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2)) {
        f("weights", &mut self.weights);
        f("bias", &mut self.bias);
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Tensor2 {
    if rate <= 0.0 {
        return Tensor2::filled(rows, cols, 1.0);
    }
    let keep = 1.0 / (1.0 - rate);
    let mut m = Tensor2::zeros(rows, cols);
    for v in m.data_mut() {
        *v = if rng.random::<f64>() < rate { 0.0 } else { keep };
    }
    m
}

pub fn hadamard(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same shape")
}
