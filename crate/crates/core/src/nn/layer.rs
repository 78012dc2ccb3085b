use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Builder-side description of a layer. Shapes are inferred from the
/// previous layer when a [`Network`](super::Network) is assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected layer. The input is flattened; the output takes
    /// `out_shape`, which lets a dense layer double as a reshape.
    Dense { out_shape: Vec<usize> },
    /// 2D cross-correlation over a `[C, H, W]` input with zero padding.
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Tanh,
    Sigmoid,
}

impl LayerSpec {
    pub fn dense(out: usize) -> Self {
        LayerSpec::Dense {
            out_shape: vec![out],
        }
    }

    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Tanh,
    Sigmoid,
}

/// A concrete layer: kind, shapes and parameters.
///
/// Dense weights are `[out, in]` row-major; conv weights are
/// `[out_c, in_c, k, k]`. Activations carry empty weight and bias arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn conv_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl Layer {
    /// Builds a layer from its spec with Glorot-uniform weights and zero bias.
    pub fn from_spec<R: Rng + ?Sized>(
        spec: &LayerSpec,
        in_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let in_len: usize = in_shape.iter().product();
        let (kind, out_shape, n_weight, n_bias, fan_in, fan_out) = match spec {
            LayerSpec::Dense { out_shape } => {
                let out_len: usize = out_shape.iter().product();
                if out_len == 0 || in_len == 0 {
                    return Err(Error::invalid("dense layer with empty input or output"));
                }
                (
                    LayerKind::Dense,
                    out_shape.clone(),
                    out_len * in_len,
                    out_len,
                    in_len,
                    out_len,
                )
            }
            &LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = in_shape else {
                    return Err(Error::ShapeMismatch {
                        context: "conv2d input must be [C, H, W]",
                        expected: vec![0, 0, 0],
                        got: in_shape.to_vec(),
                    });
                };
                let (Some(oh), Some(ow)) = (
                    conv_out(*h, kernel, stride, padding),
                    conv_out(*w, kernel, stride, padding),
                ) else {
                    return Err(Error::invalid(format!(
                        "conv kernel {kernel} stride {stride} does not fit input {in_shape:?}"
                    )));
                };
                if out_channels == 0 {
                    return Err(Error::invalid("conv layer with zero output channels"));
                }
                let kk = kernel * kernel;
                (
                    LayerKind::Conv2d {
                        kernel,
                        stride,
                        padding,
                    },
                    vec![out_channels, oh, ow],
                    out_channels * c * kk,
                    out_channels,
                    c * kk,
                    out_channels * kk,
                )
            }
            LayerSpec::Relu => (LayerKind::Relu, in_shape.to_vec(), 0, 0, 0, 0),
            LayerSpec::Tanh => (LayerKind::Tanh, in_shape.to_vec(), 0, 0, 0, 0),
            LayerSpec::Sigmoid => (LayerKind::Sigmoid, in_shape.to_vec(), 0, 0, 0, 0),
        };
        let weight = if n_weight > 0 {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n_weight).map(|_| rng.gen_range(-limit..limit)).collect()
        } else {
            Vec::new()
        };
        Ok(Layer {
            kind,
            in_shape: in_shape.to_vec(),
            out_shape,
            weight,
            bias: vec![0.0; n_bias],
        })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Checks that parameter array lengths agree with the declared shapes.
    pub(crate) fn validate(&self) -> Result<()> {
        let in_len: usize = self.in_shape.iter().product();
        let out_len: usize = self.out_shape.iter().product();
        let (w, b) = match self.kind {
            LayerKind::Dense => (in_len * out_len, out_len),
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
            } => {
                let ([c, h, wd], [oc, oh, ow]) = (&self.in_shape[..], &self.out_shape[..]) else {
                    return Err(Error::invalid("conv layer shapes must be [C, H, W]"));
                };
                if conv_out(*h, kernel, stride, padding) != Some(*oh)
                    || conv_out(*wd, kernel, stride, padding) != Some(*ow)
                {
                    return Err(Error::ShapeMismatch {
                        context: "conv2d output shape",
                        expected: vec![*oc, *oh, *ow],
                        got: self.out_shape.clone(),
                    });
                }
                (oc * c * kernel * kernel, *oc)
            }
            _ => {
                if self.in_shape != self.out_shape {
                    return Err(Error::ShapeMismatch {
                        context: "activation output shape",
                        expected: self.in_shape.clone(),
                        got: self.out_shape.clone(),
                    });
                }
                (0, 0)
            }
        };
        if self.weight.len() != w || self.bias.len() != b {
            return Err(Error::ShapeMismatch {
                context: "layer parameter arrays",
                expected: vec![w, b],
                got: vec![self.weight.len(), self.bias.len()],
            });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            LayerKind::Dense => {
                let n_in = x.len();
                for (o, y) in out.iter_mut().enumerate() {
                    let row = &self.weight[o * n_in..(o + 1) * n_in];
                    *y = self.bias[o] + dot(row, x);
                }
            }
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
            } => self.conv_forward(x, out, kernel, stride, padding),
            LayerKind::Relu => {
                for (y, &v) in out.iter_mut().zip(x) {
                    *y = v.max(0.0);
                }
            }
            LayerKind::Tanh => {
                for (y, &v) in out.iter_mut().zip(x) {
                    *y = v.tanh();
                }
            }
            LayerKind::Sigmoid => {
                for (y, &v) in out.iter_mut().zip(x) {
                    *y = sigmoid(v);
                }
            }
        }
    }

    /// Propagates `g_out` back through the layer.
    ///
    /// `x` and `y` are the cached input and output of the forward pass.
    /// Parameter gradients are accumulated into `g_w`/`g_b`; the input
    /// gradient overwrites `g_in`, which may be empty to skip it.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        g_out: &[f64],
        g_w: &mut [f64],
        g_b: &mut [f64],
        g_in: &mut [f64],
    ) {
        match self.kind {
            LayerKind::Dense => {
                let n_in = x.len();
                g_in.iter_mut().for_each(|v| *v = 0.0);
                for (o, &g) in g_out.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    g_b[o] += g;
                    let g_row = &mut g_w[o * n_in..(o + 1) * n_in];
                    for (gw, &xi) in g_row.iter_mut().zip(x) {
                        *gw += g * xi;
                    }
                    if !g_in.is_empty() {
                        let row = &self.weight[o * n_in..(o + 1) * n_in];
                        for (gi, &w) in g_in.iter_mut().zip(row) {
                            *gi += g * w;
                        }
                    }
                }
            }
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
            } => self.conv_backward(x, g_out, g_w, g_b, g_in, kernel, stride, padding),
            LayerKind::Relu => {
                for ((gi, &g), &v) in g_in.iter_mut().zip(g_out).zip(x) {
                    *gi = if v > 0.0 { g } else { 0.0 };
                }
            }
            LayerKind::Tanh => {
                for ((gi, &g), &t) in g_in.iter_mut().zip(g_out).zip(y) {
                    *gi = g * (1.0 - t * t);
                }
            }
            LayerKind::Sigmoid => {
                for ((gi, &g), &s) in g_in.iter_mut().zip(g_out).zip(y) {
                    *gi = g * s * (1.0 - s);
                }
            }
        }
    }

    fn conv_dims(&self) -> (usize, usize, usize, usize, usize, usize) {
        (
            self.in_shape[0],
            self.in_shape[1],
            self.in_shape[2],
            self.out_shape[0],
            self.out_shape[1],
            self.out_shape[2],
        )
    }

    /// Unrolls the receptive fields of `x` into a `[c*k*k, oh*ow]` matrix;
    /// out-of-range taps read as zero.
    fn im2col(&self, x: &[f64], k: usize, s: usize, p: usize) -> Vec<f64> {
        let (c, h, w, _, oh, ow) = self.conv_dims();
        let mut cols = vec![0.0; c * k * k * oh * ow];
        for ci in 0..c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let row = &mut cols[r * oh * ow..(r + 1) * oh * ow];
                    for oy in 0..oh {
                        let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&v| v < h) else {
                            continue;
                        };
                        let xrow = &xin[iy * w..(iy + 1) * w];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if p == 0 {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = xrow[ox * s + kx];
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                if let Some(ix) = (ox * s + kx).checked_sub(p).filter(|&v| v < w) {
                                    *d = xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn conv_forward(&self, x: &[f64], out: &mut [f64], k: usize, s: usize, p: usize) {
        let (c, _, _, oc, oh, ow) = self.conv_dims();
        let n = oh * ow;
        let rows = c * k * k;
        let cols = self.im2col(x, k, s, p);
        for o in 0..oc {
            let plane = &mut out[o * n..(o + 1) * n];
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for (r, col) in cols.chunks_exact(n).enumerate() {
                let wv = self.weight[o * rows + r];
                for (y, &v) in plane.iter_mut().zip(col) {
                    *y += wv * v;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        x: &[f64],
        g_out: &[f64],
        g_w: &mut [f64],
        g_b: &mut [f64],
        g_in: &mut [f64],
        k: usize,
        s: usize,
        p: usize,
    ) {
        let (c, h, w, oc, oh, ow) = self.conv_dims();
        let n = oh * ow;
        let rows = c * k * k;
        let cols = self.im2col(x, k, s, p);
        let want_input = !g_in.is_empty();
        let mut g_cols = if want_input { vec![0.0; rows * n] } else { Vec::new() };
        for o in 0..oc {
            let gplane = &g_out[o * n..(o + 1) * n];
            g_b[o] += gplane.iter().sum::<f64>();
            for (r, col) in cols.chunks_exact(n).enumerate() {
                g_w[o * rows + r] += dot(gplane, col);
                if want_input {
                    let wv = self.weight[o * rows + r];
                    for (gc, &g) in g_cols[r * n..(r + 1) * n].iter_mut().zip(gplane) {
                        *gc += wv * g;
                    }
                }
            }
        }
        if !want_input {
            return;
        }
        // Scatter the column gradients back onto the input (col2im).
        g_in.iter_mut().for_each(|v| *v = 0.0);
        for ci in 0..c {
            let gin = &mut g_in[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let row = &g_cols[r * n..(r + 1) * n];
                    for oy in 0..oh {
                        let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&v| v < h) else {
                            continue;
                        };
                        for ox in 0..ow {
                            if let Some(ix) = (ox * s + kx).checked_sub(p).filter(|&v| v < w) {
                                gin[iy * w + ix] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Eight independent lanes, written so LLVM emits packed multiplies.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Layer::from_spec(&LayerSpec::conv(4, 3, 2, 0), &[1, 13, 13], &mut rng).unwrap();
        assert_eq!(l.out_shape, vec![4, 6, 6]);
        let l = Layer::from_spec(&LayerSpec::conv(2, 3, 1, 1), &[3, 5, 5], &mut rng).unwrap();
        assert_eq!(l.out_shape, vec![2, 5, 5]);
        assert!(Layer::from_spec(&LayerSpec::conv(2, 7, 1, 0), &[1, 5, 5], &mut rng).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1 channel 3x3 input, one 2x2 kernel, stride 1, no padding.
        let layer = Layer {
            kind: LayerKind::Conv2d {
                kernel: 2,
                stride: 1,
                padding: 0,
            },
            in_shape: vec![1, 3, 3],
            out_shape: vec![1, 2, 2],
            weight: vec![1.0, 2.0, 3.0, 4.0],
            bias: vec![0.5],
        };
        layer.validate().unwrap();
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let mut out = vec![0.0; 4];
        layer.forward(&x, &mut out);
        // top-left window [1 2; 4 5] -> 1 + 4 + 12 + 20 + 0.5
        assert_eq!(out, vec![37.5, 47.5, 67.5, 77.5]);
    }

    #[test]
    fn padded_conv_sees_zero_border() {
        let layer = Layer {
            kind: LayerKind::Conv2d {
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            in_shape: vec![1, 2, 2],
            out_shape: vec![1, 2, 2],
            weight: vec![1.0; 9],
            bias: vec![0.0],
        };
        let mut out = vec![0.0; 4];
        layer.forward(&[1.0, 2.0, 3.0, 4.0], &mut out);
        assert_eq!(out, vec![10.0; 4]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(1.0) + sigmoid(-1.0) - 1.0).abs() < 1e-15);
    }
}
