use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm_operator, svd, Matrix};

use super::layer::Layer;

/// Parameter layout of one Dense/Conv layer, enumerated in forward (preorder)
/// order including layers nested in residual blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayerInfo {
    /// Preorder node index.
    pub node: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Whether the layer sits inside a residual block.
    pub nested: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct NodeInfo {
    param_offset: usize,
    linear_index: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Feedforward network: an ordered layer stack with a validated shape chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    param_count: usize,
    nodes: Vec<NodeInfo>,
    linear: Vec<LinearLayerInfo>,
}

impl TryFrom<NetworkRepr> for Network {
    type Error = Error;
    fn try_from(r: NetworkRepr) -> Result<Self> {
        Network::new(r.layers, r.input_dim)
    }
}

impl From<Network> for NetworkRepr {
    fn from(n: Network) -> Self {
        NetworkRepr {
            input_dim: n.input_dim,
            layers: n.layers,
        }
    }
}

/// Values recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    /// Input to every node, preorder.
    node_inputs: Vec<Vec<f64>>,
    linear_nodes: Vec<usize>,
}

impl ForwardTrace {
    /// `x^l` for linear layer `l` (0-based).
    pub fn layer_input(&self, l: usize) -> &[f64] {
        &self.node_inputs[self.linear_nodes[l]]
    }

    pub fn layer_inputs(&self) -> Vec<&[f64]> {
        (0..self.linear_nodes.len()).map(|l| self.layer_input(l)).collect()
    }
}

/// Result of one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Adjoint at the network input.
    pub input: Vec<f64>,
    /// Adjoint at each linear layer's input, propagated through that layer only.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Adjoint at each linear layer's output `W_l x^l (+ b_l)`.
    pub layer_outputs: Vec<Vec<f64>>,
    /// Gradient with respect to the flattened parameter vector.
    pub params: Vec<f64>,
}

struct Sink<'a> {
    params: &'a mut [f64],
    layer_inputs: Option<&'a mut Vec<Vec<f64>>>,
    layer_outputs: Option<&'a mut Vec<Vec<f64>>>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Structure("network input dimension must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Structure("network has no layers".into()));
        }
        let mut nodes = Vec::new();
        let mut linear = Vec::new();
        let mut offset = 0;
        let output_dim = layout(&layers, input_dim, false, &mut nodes, &mut linear, &mut offset)?;
        let net = Self {
            layers,
            input_dim,
            output_dim,
            param_count: offset,
            nodes,
            linear,
        };
        if let Some(p) = net.params().iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("parameter {p} is not finite")));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn linear_layers(&self) -> &[LinearLayerInfo] {
        &self.linear
    }

    pub fn has_residual(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Residual(_)))
    }

    /// Whether the metrics' `N ≤ M` assumption is violated.
    pub fn output_exceeds_input(&self) -> bool {
        self.output_dim > self.input_dim
    }

    /// Flattened parameters: per layer in preorder, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count);
        visit_params(&self.layers, &mut |w, b| {
            out.extend_from_slice(w);
            if let Some(b) = b {
                out.extend_from_slice(b);
            }
        });
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count {
            return Err(Error::shape("set_params", self.param_count, values.len()));
        }
        let mut pos = 0;
        visit_params_mut(&mut self.layers, &mut |w, b| {
            w.copy_from_slice(&values[pos..pos + w.len()]);
            pos += w.len();
            if let Some(b) = b {
                b.copy_from_slice(&values[pos..pos + b.len()]);
                pos += b.len();
            }
        });
        Ok(())
    }

    /// `θ ← θ + scale · delta`
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.param_count {
            return Err(Error::shape("add_scaled", self.param_count, delta.len()));
        }
        let mut pos = 0;
        visit_params_mut(&mut self.layers, &mut |w, b| {
            for v in w.iter_mut() {
                *v += scale * delta[pos];
                pos += 1;
            }
            if let Some(b) = b {
                for v in b.iter_mut() {
                    *v += scale * delta[pos];
                    pos += 1;
                }
            }
        });
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut scratch = Vec::new();
        Ok(forward_seq(&self.layers, x.to_vec(), &mut scratch, false))
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut node_inputs = Vec::with_capacity(self.nodes.len());
        let output = forward_seq(&self.layers, x.to_vec(), &mut node_inputs, true);
        Ok(ForwardTrace {
            input: x.to_vec(),
            output,
            node_inputs,
            linear_nodes: self.linear.iter().map(|l| l.node).collect(),
        })
    }

    /// One reverse sweep with output adjoint `seed`, collecting every adjoint.
    pub fn backward(&self, trace: &ForwardTrace, seed: &[f64]) -> Result<Gradients> {
        self.check_seed(seed)?;
        let mut params = vec![0.0; self.param_count];
        let n_lin = self.linear.len();
        let mut layer_inputs = vec![Vec::new(); n_lin];
        let mut layer_outputs = vec![Vec::new(); n_lin];
        let input = {
            let mut sink = Sink {
                params: &mut params,
                layer_inputs: Some(&mut layer_inputs),
                layer_outputs: Some(&mut layer_outputs),
            };
            self.backward_seq(&self.layers, 0, trace, seed.to_vec(), &mut sink)
        };
        Ok(Gradients {
            input,
            layer_inputs,
            layer_outputs,
            params,
        })
    }

    /// Reverse sweep accumulating only the parameter gradient into `grad`.
    pub fn accumulate_param_grad(&self, trace: &ForwardTrace, seed: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_seed(seed)?;
        if grad.len() != self.param_count {
            return Err(Error::shape("accumulate_param_grad", self.param_count, grad.len()));
        }
        let mut sink = Sink {
            params: grad,
            layer_inputs: None,
            layer_outputs: None,
        };
        self.backward_seq(&self.layers, 0, trace, seed.to_vec(), &mut sink);
        Ok(())
    }

    /// `‖W_l‖₂` for every linear layer, bias excluded. Conv layers use power
    /// iteration on the full layer operator.
    pub fn linear_spectral_norms(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.linear.len());
        let mut idx = 0;
        let mut err = None;
        visit_linear(&self.layers, &mut |layer| {
            if err.is_some() {
                return;
            }
            let res = match layer {
                Layer::Dense(d) => svd(&d.weight).map(|s| s.largest()),
                Layer::Conv2d(c) => spectral_norm_operator(c, 0x5eed ^ idx as u64).map(|e| e.value),
                _ => unreachable!(),
            };
            match res {
                Ok(v) => out.push(v),
                Err(e) => err = Some(e),
            }
            idx += 1;
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Weight matrix of linear layer `l` when it is Dense.
    pub fn dense_weight(&self, l: usize) -> Option<&Matrix> {
        find_dense(&self.layers, l)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape("network input", self.input_dim, x.len()));
        }
        Ok(())
    }

    fn check_seed(&self, seed: &[f64]) -> Result<()> {
        if seed.len() != self.output_dim {
            return Err(Error::shape("output adjoint", self.output_dim, seed.len()));
        }
        Ok(())
    }

    fn backward_seq(
        &self,
        layers: &[Layer],
        start: usize,
        trace: &ForwardTrace,
        mut g: Vec<f64>,
        sink: &mut Sink<'_>,
    ) -> Vec<f64> {
        let mut node_ids = Vec::with_capacity(layers.len());
        let mut n = start;
        for l in layers {
            node_ids.push(n);
            n += l.node_count();
        }
        for (layer, &node) in layers.iter().zip(&node_ids).rev() {
            let x = &trace.node_inputs[node];
            let info = &self.nodes[node];
            g = match layer {
                Layer::Residual(block) => {
                    let inner = self.backward_seq(&block.layers, node + 1, trace, g.clone(), sink);
                    g.iter().zip(inner).map(|(a, b)| a + b).collect()
                }
                Layer::Activation { function } => g.iter().zip(x).map(|(gi, &z)| gi * function.derivative(z)).collect(),
                Layer::Dense(d) => {
                    let (rows, cols) = (d.weight.rows(), d.weight.cols());
                    let off = info.param_offset;
                    {
                        let dw = &mut sink.params[off..off + rows * cols];
                        for (i, &gi) in g.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            for (dwij, xj) in dw[i * cols..(i + 1) * cols].iter_mut().zip(x) {
                                *dwij += gi * xj;
                            }
                        }
                    }
                    if d.bias.is_some() {
                        let db = &mut sink.params[off + rows * cols..off + rows * cols + rows];
                        db.iter_mut().zip(&g).for_each(|(b, gi)| *b += gi);
                    }
                    let dx = d.weight.matvec_t(&g);
                    self.record(sink, info, &g, &dx);
                    dx
                }
                Layer::Conv2d(c) => {
                    let off = info.param_offset;
                    let nw = c.weight_count();
                    let (dw, rest) = sink.params[off..].split_at_mut(nw);
                    let db = c.bias.as_ref().map(|b| &mut rest[..b.len()]);
                    c.accumulate_param_grads(x, &g, dw, db);
                    let dx = c.apply_linear_transpose(&g);
                    self.record(sink, info, &g, &dx);
                    dx
                }
            };
        }
        g
    }

    fn record(&self, sink: &mut Sink<'_>, info: &NodeInfo, g_out: &[f64], g_in: &[f64]) {
        let l = info.linear_index.expect("linear node");
        if let Some(li) = sink.layer_inputs.as_deref_mut() {
            li[l] = g_in.to_vec();
        }
        if let Some(lo) = sink.layer_outputs.as_deref_mut() {
            lo[l] = g_out.to_vec();
        }
    }
}

fn find_dense(layers: &[Layer], target: usize) -> Option<&Matrix> {
    fn walk<'a>(layers: &'a [Layer], target: usize, idx: &mut usize) -> Option<&'a Matrix> {
        for layer in layers {
            match layer {
                Layer::Residual(b) => {
                    if let Some(m) = walk(&b.layers, target, idx) {
                        return Some(m);
                    }
                }
                Layer::Dense(d) => {
                    if *idx == target {
                        return Some(&d.weight);
                    }
                    *idx += 1;
                }
                Layer::Conv2d(_) => *idx += 1,
                Layer::Activation { .. } => {}
            }
        }
        None
    }
    walk(layers, target, &mut 0)
}

fn layout(
    layers: &[Layer],
    mut dim: usize,
    nested: bool,
    nodes: &mut Vec<NodeInfo>,
    linear: &mut Vec<LinearLayerInfo>,
    offset: &mut usize,
) -> Result<usize> {
    for layer in layers {
        let node = nodes.len();
        nodes.push(NodeInfo {
            param_offset: *offset,
            linear_index: None,
        });
        let in_dim = dim;
        dim = match layer {
            Layer::Dense(d) => {
                if d.weight.cols() != dim {
                    return Err(Error::shape("dense layer input", dim, d.weight.cols()));
                }
                if let Some(b) = &d.bias {
                    if b.len() != d.weight.rows() {
                        return Err(Error::shape("dense bias", d.weight.rows(), b.len()));
                    }
                }
                d.weight.rows()
            }
            Layer::Conv2d(c) => {
                if !c.geometry_ok() {
                    return Err(Error::Structure("conv2d geometry is inconsistent".into()));
                }
                if c.in_dim() != dim {
                    return Err(Error::shape("conv2d input", dim, c.in_dim()));
                }
                c.out_dim()
            }
            Layer::Activation { .. } => dim,
            Layer::Residual(block) => {
                if block.layers.is_empty() {
                    return Err(Error::Structure("empty residual block".into()));
                }
                let out = layout(&block.layers, dim, true, nodes, linear, offset)?;
                if out != dim {
                    return Err(Error::shape("residual block output", dim, out));
                }
                dim
            }
        };
        if layer.is_linear() {
            let (nw, nb) = layer.own_param_counts();
            nodes[node].linear_index = Some(linear.len());
            linear.push(LinearLayerInfo {
                node,
                weights: *offset..*offset + nw,
                bias: *offset + nw..*offset + nw + nb,
                in_dim,
                out_dim: dim,
                nested,
            });
            *offset += nw + nb;
        }
    }
    Ok(dim)
}

fn forward_seq(layers: &[Layer], x: Vec<f64>, cache: &mut Vec<Vec<f64>>, record: bool) -> Vec<f64> {
    let mut cur = x;
    for layer in layers {
        if record {
            cache.push(cur.clone());
        }
        cur = match layer {
            Layer::Residual(block) => {
                let inner = forward_seq(&block.layers, cur.clone(), cache, record);
                cur.iter().zip(inner).map(|(a, b)| a + b).collect()
            }
            leaf => leaf.apply_leaf(&cur),
        };
    }
    cur
}

fn visit_linear<'a>(layers: &'a [Layer], f: &mut impl FnMut(&'a Layer)) {
    for layer in layers {
        match layer {
            Layer::Residual(b) => visit_linear(&b.layers, f),
            l if l.is_linear() => f(l),
            _ => {}
        }
    }
}

fn visit_params(layers: &[Layer], f: &mut impl FnMut(&[f64], Option<&[f64]>)) {
    for layer in layers {
        match layer {
            Layer::Dense(d) => f(d.weight.data(), d.bias.as_deref()),
            Layer::Conv2d(c) => f(&c.weights, c.bias.as_deref()),
            Layer::Residual(b) => visit_params(&b.layers, f),
            Layer::Activation { .. } => {}
        }
    }
}

fn visit_params_mut(layers: &mut [Layer], f: &mut impl FnMut(&mut [f64], Option<&mut [f64]>)) {
    for layer in layers {
        match layer {
            Layer::Dense(d) => f(d.weight.data_mut(), d.bias.as_deref_mut()),
            Layer::Conv2d(c) => f(&mut c.weights, c.bias.as_deref_mut()),
            Layer::Residual(b) => visit_params_mut(&mut b.layers, f),
            Layer::Activation { .. } => {}
        }
    }
}
