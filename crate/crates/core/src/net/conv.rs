use serde::{Deserialize, Serialize};

use crate::linalg::LinearOperator;

/// 2-D convolution over a flattened `channels × height × width` input with
/// zero padding. Output is flattened the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out_channels][in_channels][kernel_h][kernel_w]`
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Conv2d {
    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn in_dim(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_dim(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub(crate) fn geometry_ok(&self) -> bool {
        self.stride >= 1
            && self.kernel_h >= 1
            && self.kernel_w >= 1
            && self.kernel_h <= self.in_height + 2 * self.padding
            && self.kernel_w <= self.in_width + 2 * self.padding
            && self.weights.len() == self.weight_count()
            && self.bias.as_ref().is_none_or(|b| b.len() == self.out_channels)
    }

    #[inline]
    fn w_index(&self, o: usize, c: usize, a: usize, b: usize) -> usize {
        ((o * self.in_channels + c) * self.kernel_h + a) * self.kernel_w + b
    }

    /// Visits every (output index, input index, weight index) triple of the
    /// convolution's sparse operator matrix.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let pad = self.padding as isize;
        for o in 0..self.out_channels {
            for r in 0..oh {
                for col in 0..ow {
                    let out_idx = (o * oh + r) * ow + col;
                    for c in 0..self.in_channels {
                        for a in 0..self.kernel_h {
                            let ir = (r * self.stride + a) as isize - pad;
                            if ir < 0 || ir >= self.in_height as isize {
                                continue;
                            }
                            for b in 0..self.kernel_w {
                                let ic = (col * self.stride + b) as isize - pad;
                                if ic < 0 || ic >= self.in_width as isize {
                                    continue;
                                }
                                let in_idx = (c * self.in_height + ir as usize) * self.in_width + ic as usize;
                                f(out_idx, in_idx, self.w_index(o, c, a, b));
                            }
                        }
                    }
                }
            }
        }
    }

    /// Linear part only (no bias).
    pub fn apply_linear(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out_dim()];
        self.for_each_tap(|o, i, w| y[o] += self.weights[w] * x[i]);
        y
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply_linear(x);
        if let Some(bias) = &self.bias {
            let plane = self.out_height() * self.out_width();
            for (o, b) in bias.iter().enumerate() {
                y[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += b);
            }
        }
        y
    }

    /// Adjoint of the linear part.
    pub fn apply_linear_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim()];
        self.for_each_tap(|o, i, w| dx[i] += self.weights[w] * g[o]);
        dx
    }

    /// Accumulates weight and bias gradients for output adjoint `g` at input `x`.
    pub(crate) fn accumulate_param_grads(&self, x: &[f64], g: &[f64], dw: &mut [f64], db: Option<&mut [f64]>) {
        self.for_each_tap(|o, i, w| dw[w] += g[o] * x[i]);
        if let Some(db) = db {
            let plane = self.out_height() * self.out_width();
            for (o, d) in db.iter_mut().enumerate() {
                *d += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
            }
        }
    }
}

impl LinearOperator for Conv2d {
    fn in_dim(&self) -> usize {
        Conv2d::in_dim(self)
    }
    fn out_dim(&self) -> usize {
        Conv2d::out_dim(self)
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.apply_linear(x)
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.apply_linear_transpose(y)
    }
}
