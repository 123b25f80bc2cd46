use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::report::BoundReport;

use super::layer::Layer;
use super::network::Network;

/// Per-sample derivative information, assembled from one reverse sweep per
/// output coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobianBundle {
    /// Raw network input.
    pub x: Vec<f64>,
    pub output: Vec<f64>,
    /// `∇_x f`, `N × M`.
    pub j_input: Matrix,
    /// `∇_{x^l} f_l` for every linear layer, taken through layer `l`.
    pub j_layer: Vec<Matrix>,
    /// `∂f/∂(W_l x^l)`, `N × out_dim(l)`.
    pub j_layer_out: Vec<Matrix>,
    /// Inputs `x^l` to every linear layer.
    pub layer_inputs: Vec<Vec<f64>>,
    /// `‖∇_θ f‖_F²` including biases.
    pub param_grad_sq_fro: f64,
    /// `‖∇_{W_l} f‖_F²`, biases excluded.
    pub per_layer_weight_grad_sq_fro: Vec<f64>,
    pub per_layer_bias_grad_sq_fro: Vec<f64>,
    /// `Σ_j θ_j² ‖∂f/∂θ_j‖²`.
    pub param_grad_weighted_sq: f64,
}

impl JacobianBundle {
    pub fn output_dim(&self) -> usize {
        self.j_input.rows()
    }

    pub fn input_norm(&self) -> f64 {
        norm2(&self.x)
    }
}

pub fn jacobians(net: &Network, x: &[f64]) -> Result<JacobianBundle> {
    let trace = net.forward(x)?;
    let n_out = net.output_dim();
    let lin = net.linear_layers();
    let theta = net.params();

    let mut j_input = Matrix::zeros(n_out, net.input_dim());
    let mut j_layer: Vec<Matrix> = lin.iter().map(|l| Matrix::zeros(n_out, l.in_dim)).collect();
    let mut j_layer_out: Vec<Matrix> = lin.iter().map(|l| Matrix::zeros(n_out, l.out_dim)).collect();
    let mut param_sq = vec![0.0; net.param_count()];

    let mut seed = vec![0.0; n_out];
    for o in 0..n_out {
        seed.fill(0.0);
        seed[o] = 1.0;
        let g = net.backward(&trace, &seed)?;
        j_input.row_mut(o).copy_from_slice(&g.input);
        for l in 0..lin.len() {
            j_layer[l].row_mut(o).copy_from_slice(&g.layer_inputs[l]);
            j_layer_out[l].row_mut(o).copy_from_slice(&g.layer_outputs[l]);
        }
        for (acc, gp) in param_sq.iter_mut().zip(&g.params) {
            *acc += gp * gp;
        }
    }

    let per_layer_weight_grad_sq_fro = lin.iter().map(|l| param_sq[l.weights.clone()].iter().sum()).collect();
    let per_layer_bias_grad_sq_fro = lin.iter().map(|l| param_sq[l.bias.clone()].iter().sum()).collect();
    let param_grad_weighted_sq = param_sq.iter().zip(&theta).map(|(g, t)| g * t * t).sum();
    let bundle = JacobianBundle {
        x: x.to_vec(),
        output: trace.output.clone(),
        j_input,
        j_layer,
        j_layer_out,
        layer_inputs: trace.layer_inputs().into_iter().map(<[f64]>::to_vec).collect(),
        param_grad_sq_fro: param_sq.iter().sum(),
        per_layer_weight_grad_sq_fro,
        per_layer_bias_grad_sq_fro,
        param_grad_weighted_sq,
    };
    if !bundle.j_input.is_finite() || !bundle.param_grad_sq_fro.is_finite() {
        return Err(Error::NumericFailure {
            context: "non-finite Jacobian".into(),
            residual: f64::NAN,
        });
    }
    Ok(bundle)
}

/// `‖∇_W f‖_F = ‖J‖_F ‖x‖₂` for the first (Dense) layer, with `J = ∂f/∂(Wx)`.
pub fn weight_gradient_identity_check(net: &Network, x: &[f64]) -> Result<BoundReport> {
    if !matches!(net.layers().first(), Some(Layer::Dense(_))) {
        return Err(Error::Structure(
            "weight-gradient identity needs a Dense first layer".into(),
        ));
    }
    let b = jacobians(net, x)?;
    let lhs = b.per_layer_weight_grad_sq_fro[0].sqrt();
    let rhs = b.j_layer_out[0].frobenius_norm() * norm2(x);
    Ok(BoundReport::equality("weight_gradient_identity", lhs, rhs, 1e-9))
}
