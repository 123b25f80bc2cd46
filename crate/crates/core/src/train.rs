//! Architectures, initialization and plain SGD.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{MetricRecord, DEFAULT_INTERP_EPS, DEFAULT_SAMPLE_BUDGET};
use crate::net::{Activation, Conv2d, Layer, Network};

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ArchSpec {
    /// Dense layers through `widths` (input first, output last) with the
    /// activation between them.
    Mlp {
        widths: Vec<usize>,
        activation: Activation,
        #[serde(default = "yes")]
        bias: bool,
    },
    /// Two conv layers and two dense layers over a `channels × height × width` input.
    LenetSmall {
        channels: usize,
        height: usize,
        width: usize,
        classes: usize,
    },
    /// Dense stem, one residual block `x + tanh(W x + b)` per repeated middle
    /// width, dense head.
    Resmlp {
        widths: Vec<usize>,
        #[serde(default = "tanh")]
        activation: Activation,
    },
}

fn yes() -> bool {
    true
}

fn tanh() -> Activation {
    Activation::Tanh
}

impl ArchSpec {
    pub fn label(&self) -> String {
        match self {
            ArchSpec::Mlp { widths, .. } => format!("mlp{}", join(widths)),
            ArchSpec::LenetSmall {
                channels,
                height,
                width,
                classes,
            } => format!("lenet{channels}x{height}x{width}-{classes}"),
            ArchSpec::Resmlp { widths, .. } => format!("resmlp{}", join(widths)),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ArchSpec::Mlp { widths, .. } | ArchSpec::Resmlp { widths, .. } => widths.first().copied().unwrap_or(0),
            ArchSpec::LenetSmall {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
        }
    }
}

fn join(w: &[usize]) -> String {
    w.iter().map(|v| format!("-{v}")).collect()
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, n: usize, fan_in: usize) -> Vec<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
    }

    fn dense(&mut self, input: usize, output: usize, bias: bool) -> Layer {
        let w = Matrix::new(output, input, self.uniform(output * input, input)).expect("finite init");
        let b = bias.then(|| self.uniform(output, input));
        Layer::dense(w, b)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, c: usize, h: usize, w: usize, oc: usize, k: usize, stride: usize, padding: usize) -> Conv2d {
        let fan_in = c * k * k;
        Conv2d {
            in_channels: c,
            in_height: h,
            in_width: w,
            out_channels: oc,
            kernel_h: k,
            kernel_w: k,
            stride,
            padding,
            weights: self.uniform(oc * c * k * k, fan_in),
            bias: Some(self.uniform(oc, fan_in)),
        }
    }
}

/// Fan-in scaled uniform initialization, `U(−1/√fan_in, 1/√fan_in)`.
pub fn init_network(arch: &ArchSpec, seed: u64) -> Result<Network> {
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    match arch {
        ArchSpec::Mlp {
            widths,
            activation,
            bias,
        } => {
            if widths.len() < 2 || widths.contains(&0) {
                return Err(Error::config("arch.widths", "need at least two positive widths"));
            }
            let mut layers = Vec::new();
            for (k, pair) in widths.windows(2).enumerate() {
                if k > 0 {
                    layers.push(Layer::activation(*activation));
                }
                layers.push(init.dense(pair[0], pair[1], *bias));
            }
            Network::new(layers, widths[0])
        }
        ArchSpec::Resmlp { widths, activation } => {
            if widths.len() < 3 || widths.contains(&0) {
                return Err(Error::config(
                    "arch.widths",
                    "need input, at least one hidden, and output widths",
                ));
            }
            let hidden = &widths[1..widths.len() - 1];
            if hidden.iter().any(|&h| h != hidden[0]) {
                return Err(Error::config("arch.widths", "residual hidden widths must be equal"));
            }
            let h = hidden[0];
            let mut layers = vec![init.dense(widths[0], h, true), Layer::activation(*activation)];
            for _ in 1..hidden.len() {
                layers.push(Layer::residual(vec![
                    init.dense(h, h, true),
                    Layer::activation(*activation),
                ]));
            }
            layers.push(init.dense(h, widths[widths.len() - 1], true));
            Network::new(layers, widths[0])
        }
        ArchSpec::LenetSmall {
            channels,
            height,
            width,
            classes,
        } => {
            let (c, h, w) = (*channels, *height, *width);
            if c == 0 || h < 4 || w < 4 || *classes == 0 {
                return Err(Error::config(
                    "arch",
                    "lenet_small needs at least a 1×4×4 input and one class",
                ));
            }
            let conv1 = if h >= 16 && w >= 16 {
                init.conv(c, h, w, 4, 5, 2, 0)
            } else {
                init.conv(c, h, w, 4, 3, 1, 0)
            };
            let (h1, w1) = (conv1.out_height(), conv1.out_width());
            let conv2 = if h1 >= 6 && w1 >= 6 {
                init.conv(4, h1, w1, 8, 3, 2, 0)
            } else {
                init.conv(4, h1, w1, 8, 2, 1, 0)
            };
            let flat = conv2.out_dim();
            let layers = vec![
                Layer::Conv2d(conv1),
                Layer::activation(Activation::Relu),
                Layer::Conv2d(conv2),
                Layer::activation(Activation::Relu),
                init.dense(flat, 32, true),
                Layer::activation(Activation::Relu),
                init.dense(32, *classes, true),
            ];
            Network::new(layers, c * h * w)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    #[serde(default = "default_interp")]
    pub interp_eps: f64,
    #[serde(default = "default_budget")]
    pub metric_sample_budget: usize,
}

fn default_interp() -> f64 {
    DEFAULT_INTERP_EPS
}

fn default_budget() -> usize {
    DEFAULT_SAMPLE_BUDGET
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        self.validate_frozen_ok()
    }

    /// Like [`validate`](Self::validate) but admits a zero learning rate.
    fn validate_frozen_ok(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(
                "learning_rate",
                format!("must be non-negative and finite, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if !(self.interp_eps >= 0.0) {
            return Err(Error::config("interp_eps", "must be non-negative"));
        }
        if self.metric_sample_budget == 0 {
            return Err(Error::config("metric_sample_budget", "must be at least 1"));
        }
        Ok(())
    }

    /// Steps at which the metric hook runs: 0, every `eval_every`, and the last.
    pub fn eval_steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = (0..=self.steps).step_by(self.eval_every).collect();
        if s.last() != Some(&self.steps) {
            s.push(self.steps);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub network: Network,
    pub record: MetricRecord,
}

pub const CHECKPOINT_FORMAT: &str = "sharpcomp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    step: usize,
    network: Network,
    record: Option<MetricRecord>,
}

pub fn save_checkpoint(path: &Path, step: usize, net: &Network, record: Option<&MetricRecord>) -> Result<()> {
    let body = serde_json::to_string_pretty(&CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        step,
        network: net.clone(),
        record: record.cloned(),
    })?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Loads `(step, network, record)`.
pub fn load_checkpoint(path: &Path) -> Result<(usize, Network, Option<MetricRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: CheckpointFile = serde_json::from_str(&text)?;
    if f.format != CHECKPOINT_FORMAT || f.version != CHECKPOINT_VERSION {
        return Err(Error::Contract(format!(
            "unsupported checkpoint {} v{}",
            f.format, f.version
        )));
    }
    Ok((f.step, f.network, f.record))
}

/// Minibatch SGD on `(1/B) Σ ½‖f(x_i) − y_i‖²` over the train split, with
/// reshuffled epochs. `hook(net, step)` runs at every evaluation step and its
/// record is stored with a snapshot of the network. A zero learning rate is
/// accepted here and leaves the network frozen.
pub fn train_sgd<F>(net: &mut Network, ds: &Dataset, cfg: &TrainConfig, mut hook: F) -> Result<Vec<Checkpoint>>
where
    F: FnMut(&Network, usize) -> Result<MetricRecord>,
{
    cfg.validate_frozen_ok()?;
    if ds.input_dim() != net.input_dim() || ds.output_dim() != net.output_dim() {
        return Err(Error::shape(
            "train_sgd dataset",
            format!("{}→{}", net.input_dim(), net.output_dim()),
            format!("{}→{}", ds.input_dim(), ds.output_dim()),
        ));
    }
    if ds.train.is_empty() {
        return Err(Error::EmptySamples("train split is empty".into()));
    }
    let eval_steps = cfg.eval_steps();
    let mut next_eval = 0;
    let mut checkpoints = Vec::with_capacity(eval_steps.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = ds.train.clone();
    let mut cursor = order.len();
    let mut grad = vec![0.0; net.param_count()];

    for step in 0..=cfg.steps {
        if next_eval < eval_steps.len() && eval_steps[next_eval] == step {
            let record = hook(net, step)?;
            if !record.train_loss.is_finite() || record.train_loss > DIVERGENCE_LOSS {
                return Err(Error::Divergence {
                    step,
                    loss: record.train_loss,
                });
            }
            checkpoints.push(Checkpoint {
                step,
                network: net.clone(),
                record,
            });
            next_eval += 1;
        }
        if step == cfg.steps {
            break;
        }
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = &order[cursor..(cursor + cfg.batch_size).min(order.len())];
        cursor += batch.len();

        grad.fill(0.0);
        let mut batch_loss = 0.0;
        for &i in batch {
            let trace = net.forward(ds.x(i))?;
            let resid: Vec<f64> = trace.output.iter().zip(ds.y(i)).map(|(a, b)| a - b).collect();
            batch_loss += 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
            net.accumulate_param_grad(&trace, &resid, &mut grad)?;
        }
        let b = batch.len() as f64;
        batch_loss /= b;
        if !batch_loss.is_finite() || batch_loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { step, loss: batch_loss });
        }
        net.add_scaled(&grad, -cfg.learning_rate / b)?;
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: step + 1,
                loss: f64::INFINITY,
            });
        }
    }
    Ok(checkpoints)
}
