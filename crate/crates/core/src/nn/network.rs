use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradient (or moment) buffers with one weight/bias pair per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub blocks: Vec<GradBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradBlock {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            blocks: net
                .layers
                .iter()
                .map(|l| GradBlock {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.weight.iter().chain(b.bias.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.weight.iter_mut().chain(b.bias.iter_mut()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn fill_zero(&mut self) {
        self.values_mut().for_each(|v| *v = 0.0);
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Rescales in place so the global L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub(crate) fn shape_matches(&self, net: &Network) -> bool {
        self.blocks.len() == net.layers.len()
            && self
                .blocks
                .iter()
                .zip(&net.layers)
                .all(|(b, l)| b.weight.len() == l.weight.len() && b.bias.len() == l.bias.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment estimates and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Gradients,
    pub v: Gradients,
}

/// A sequential stack of layers together with its optimizer state.
///
/// `forward` caches every intermediate activation so that `backward` can
/// run; `infer` is the cache-free path and takes `&self`, so a shared
/// snapshot can be evaluated from several threads at once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    adam: AdamState,
    #[serde(skip)]
    cache: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    spare: Vec<Vec<f64>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.adam == other.adam
    }
}

impl Network {
    pub fn new<R: Rng + ?Sized>(
        input_shape: &[usize],
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for spec in specs {
            let layer = Layer::from_spec(spec, &shape, rng)?;
            shape = layer.out_shape.clone();
            layers.push(layer);
        }
        Self::from_layers(input_shape, layers)
    }

    /// Assembles a network from explicit layers, checking that adjacent
    /// shapes agree and parameters are finite.
    pub fn from_layers(input_shape: &[usize], layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for layer in &layers {
            if layer.in_shape.iter().product::<usize>() != shape.iter().product::<usize>()
                || (!matches!(layer.kind, super::LayerKind::Dense) && layer.in_shape != shape)
            {
                return Err(Error::ShapeMismatch {
                    context: "adjacent layer shapes",
                    expected: shape,
                    got: layer.in_shape.clone(),
                });
            }
            layer.validate()?;
            if !layer.weight.iter().chain(&layer.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("layer parameters".into()));
            }
            shape = layer.out_shape.clone();
        }
        let mut net = Network {
            input_shape: input_shape.to_vec(),
            layers,
            adam: AdamState {
                t: 0,
                m: Gradients { blocks: vec![] },
                v: Gradients { blocks: vec![] },
            },
            cache: None,
            spare: Vec::new(),
        };
        net.adam.m = Gradients::zeros_like(&net);
        net.adam.v = Gradients::zeros_like(&net);
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.out_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Direct parameter access. Callers must keep array lengths intact.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.cache = None;
        &mut self.layers
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Evaluates without touching the activation cache.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.data().to_vec();
        for layer in &self.layers {
            let mut out = vec![0.0; layer.out_shape.iter().product()];
            layer.forward(&cur, &mut out);
            cur = out;
        }
        Tensor::new(self.output_shape().to_vec(), cur)
    }

    /// Evaluates and caches activations for a subsequent [`backward`](Self::backward).
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut acts = self.cache.take().unwrap_or_else(|| std::mem::take(&mut self.spare));
        acts.resize_with(self.layers.len() + 1, Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(x.data());
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(i + 1);
            let out = &mut tail[0];
            out.clear();
            out.resize(layer.out_shape.iter().product(), 0.0);
            layer.forward(&head[i], out);
        }
        let y = Tensor::new(self.output_shape().to_vec(), acts[self.layers.len()].clone())?;
        self.cache = Some(acts);
        Ok(y)
    }

    /// Backpropagates `grad_out` (dL/dy of the last forward) and returns
    /// freshly allocated parameter gradients.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but adds into `grads`, and returns
    /// the gradient with respect to the network input. Consumes the cache.
    pub fn backward_accumulate(&mut self, grad_out: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let g = self.backward_impl(grad_out, grads, true)?;
        Tensor::new(self.input_shape.clone(), g)
    }

    /// [`backward_accumulate`](Self::backward_accumulate) without the
    /// input gradient, which saves the first layer's input pass.
    pub fn accumulate_param_grads(&mut self, grad_out: &Tensor, grads: &mut Gradients) -> Result<()> {
        self.backward_impl(grad_out, grads, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad_out: &Tensor, grads: &mut Gradients, input_grad: bool) -> Result<Vec<f64>> {
        let acts = self.cache.take().ok_or(Error::MissingForwardCache)?;
        if grad_out.shape() != self.output_shape() {
            let expected = self.output_shape().to_vec();
            self.cache = Some(acts);
            return Err(Error::ShapeMismatch {
                context: "loss gradient",
                expected,
                got: grad_out.shape().to_vec(),
            });
        }
        if !grads.shape_matches(self) {
            self.cache = Some(acts);
            return Err(Error::invalid("gradient buffer does not match network"));
        }
        let mut g = grad_out.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let len = if i == 0 && !input_grad { 0 } else { acts[i].len() };
            let mut g_in = vec![0.0; len];
            let block = &mut grads.blocks[i];
            layer.backward(
                &acts[i],
                &acts[i + 1],
                &g,
                &mut block.weight,
                &mut block.bias,
                &mut g_in,
            );
            g = g_in;
        }
        // Keep the buffers for the next forward; a second backward without
        // a new forward is an error.
        self.spare = acts;
        Ok(g)
    }

    /// One Adam update. Rejects non-finite gradients before touching any
    /// parameter, and verifies every parameter is finite afterwards.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if !grads.shape_matches(self) {
            return Err(Error::invalid("gradient buffer does not match network"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.adam.t += 1;
        let t = self.adam.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let g = &grads.blocks[i];
            let m = &mut self.adam.m.blocks[i];
            let v = &mut self.adam.v.blocks[i];
            let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weight.iter().chain(&g.bias);
            let ms = m.weight.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weight.iter_mut().chain(v.bias.iter_mut());
            for (((p, &gv), mv), vv) in params.zip(gs).zip(ms).zip(vs) {
                *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        if !self.params_finite() {
            return Err(Error::NonFinite("parameters after Adam step".into()));
        }
        Ok(())
    }
}
