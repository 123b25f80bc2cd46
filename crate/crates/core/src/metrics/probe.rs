use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, Dataset};
use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::net::{jacobians, JacobianBundle, Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    TrainSubsample,
    TestAll,
    TestMisclassified,
}

/// Dataset rows a metric is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub selector: Selector,
    pub indices: Vec<usize>,
    /// Rows dropped because `‖x‖₂` was below the norm floor.
    pub excluded_zero_norm: usize,
}

impl SampleSet {
    fn build(selector: Selector, ds: &Dataset, candidates: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut indices = Vec::new();
        let mut excluded = 0;
        for i in candidates {
            if norm2(ds.x(i)) >= crate::data::NORM_FLOOR {
                indices.push(i);
            } else {
                excluded += 1;
            }
        }
        if indices.is_empty() {
            return Err(Error::EmptySamples(format!("{selector:?} selects no usable samples")));
        }
        Ok(Self {
            selector,
            indices,
            excluded_zero_norm: excluded,
        })
    }

    /// The first `budget` train rows taken at an even stride, so every class
    /// of a class-ordered dataset is represented.
    pub fn train_subsample(ds: &Dataset, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::EmptySamples("metric sample budget is 0".into()));
        }
        let n = ds.train.len();
        let take = budget.min(n);
        Self::build(Selector::TrainSubsample, ds, (0..take).map(|k| ds.train[k * n / take]))
    }

    pub fn test_all(ds: &Dataset) -> Result<Self> {
        Self::build(Selector::TestAll, ds, ds.test.iter().copied())
    }

    /// `Ok(None)` when every test sample is classified correctly.
    pub fn test_misclassified(ds: &Dataset, net: &Network) -> Result<Option<Self>> {
        let mut wrong = Vec::new();
        for &i in &ds.test {
            if argmax(&net.predict(ds.x(i))?) != ds.label(i) {
                wrong.push(i);
            }
        }
        if wrong.is_empty() {
            return Ok(None);
        }
        Self::build(Selector::TestMisclassified, ds, wrong).map(Some)
    }

    pub fn from_indices(selector: Selector, ds: &Dataset, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= ds.len()) {
            return Err(Error::shape("sample index", format!("< {}", ds.len()), bad));
        }
        Self::build(selector, ds, indices.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Everything the metrics need about a network on a sample set: one
/// [`JacobianBundle`] per sample plus the spectral norms of the linear layers.
#[derive(Debug, Clone)]
pub struct Probe {
    pub bundles: Vec<JacobianBundle>,
    pub targets: Vec<Vec<f64>>,
    /// `‖W_l‖₂` per linear layer, biases excluded.
    pub weight_norms: Vec<f64>,
    /// Whether the network's first layer is Dense/Conv.
    pub first_is_linear: bool,
    /// Whether the first layer is Dense (exact weight-gradient identity).
    pub first_is_dense: bool,
    /// Output width of the first layer's operator.
    pub first_layer_out: usize,
    pub last_is_linear: bool,
    pub has_residual: bool,
    /// Every residual block opens with a linear layer.
    pub residual_well_formed: bool,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Probe {
    pub fn new(net: &Network, ds: &Dataset, samples: &SampleSet) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples("probe over an empty sample set".into()));
        }
        if ds.input_dim() != net.input_dim() || ds.output_dim() != net.output_dim() {
            return Err(Error::shape(
                "dataset vs network",
                format!("{}→{}", net.input_dim(), net.output_dim()),
                format!("{}→{}", ds.input_dim(), ds.output_dim()),
            ));
        }
        let bundles = samples
            .indices
            .par_iter()
            .map(|&i| jacobians(net, ds.x(i)))
            .collect::<Result<Vec<_>>>()?;
        let layers = net.layers();
        let lin = net.linear_layers();
        Ok(Self {
            targets: samples.indices.iter().map(|&i| ds.y(i).to_vec()).collect(),
            bundles,
            weight_norms: net.linear_spectral_norms()?,
            first_is_linear: layers.first().is_some_and(Layer::is_linear),
            first_is_dense: matches!(layers.first(), Some(Layer::Dense(_))),
            first_layer_out: lin.first().map_or(0, |l| l.out_dim),
            last_is_linear: layers.last().is_some_and(Layer::is_linear),
            has_residual: net.has_residual(),
            residual_well_formed: residual_blocks_open_linear(layers),
            input_dim: net.input_dim(),
            output_dim: net.output_dim(),
        })
    }

    pub fn n(&self) -> usize {
        self.bundles.len()
    }

    pub fn n_linear(&self) -> usize {
        self.weight_norms.len()
    }

    pub(crate) fn require_first_linear(&self, what: &str) -> Result<()> {
        if self.first_is_linear {
            Ok(())
        } else {
            Err(Error::Structure(format!("{what} needs a Dense or Conv2d first layer")))
        }
    }
}

fn residual_blocks_open_linear(layers: &[Layer]) -> bool {
    layers.iter().all(|l| match l {
        Layer::Residual(b) => b.layers.first().is_some_and(Layer::is_linear) && residual_blocks_open_linear(&b.layers),
        _ => true,
    })
}
