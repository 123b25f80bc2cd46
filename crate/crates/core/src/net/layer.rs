use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

use super::conv::Conv2d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative at pre-activation `z`. ReLU uses 0 at exactly 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// Fully connected layer `x ↦ W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>) -> Self {
        Self { weight, bias }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        if let Some(b) = &self.bias {
            y.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
        }
        y
    }
}

/// `x ↦ x + inner(x)`; the inner stack must preserve dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Activation { function: Activation },
    Residual(ResidualBlock),
}

impl Layer {
    pub fn dense(weight: Matrix, bias: Option<Vec<f64>>) -> Self {
        Layer::Dense(Dense::new(weight, bias))
    }

    pub fn activation(function: Activation) -> Self {
        Layer::Activation { function }
    }

    pub fn residual(layers: Vec<Layer>) -> Self {
        Layer::Residual(ResidualBlock { layers })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    /// Number of nodes in this layer's subtree (itself plus nested layers).
    pub(crate) fn node_count(&self) -> usize {
        match self {
            Layer::Residual(b) => 1 + b.layers.iter().map(Layer::node_count).sum::<usize>(),
            _ => 1,
        }
    }

    /// `(weights, biases)` parameter counts for this node only.
    pub(crate) fn own_param_counts(&self) -> (usize, usize) {
        match self {
            Layer::Dense(d) => (d.weight.rows() * d.weight.cols(), d.bias.as_ref().map_or(0, Vec::len)),
            Layer::Conv2d(c) => (c.weight_count(), c.bias.as_ref().map_or(0, Vec::len)),
            _ => (0, 0),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Residual(b) => b.layers.iter().map(Layer::param_count).sum(),
            other => {
                let (w, b) = other.own_param_counts();
                w + b
            }
        }
    }

    /// Applies a non-residual layer.
    pub(crate) fn apply_leaf(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv2d(c) => c.forward(x),
            Layer::Activation { function } => x.iter().map(|&z| function.eval(z)).collect(),
            Layer::Residual(_) => unreachable!("residual blocks are expanded by the network"),
        }
    }
}
