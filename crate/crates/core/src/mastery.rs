//! Mastery evaluator: a real-vs-reconstructed image classifier whose
//! output on a reconstruction is the mastery level alpha.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, AdamConfig, Gradients, LayerSpec, Network, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluatorConfig {
    pub channels: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
    pub lr: f64,
    pub steps_per_update: usize,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            channels: [8, 16],
            kernel: 3,
            stride: 2,
            lr: 3e-4,
            steps_per_update: 1,
        }
    }
}

/// Probability, in `[0, 1]`, that a reconstruction is a real state.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MasteryScore(f64);

impl MasteryScore {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("mastery score {alpha} outside [0, 1]")));
        }
        Ok(MasteryScore(alpha))
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

/// Numerically stable `-[y ln σ(z) + (1-y) ln(1-σ(z))]`.
fn bce_with_logit(z: f64, label: f64) -> f64 {
    z.max(0.0) - z * label + (-z.abs()).exp().ln_1p()
}

/// Binary classifier trained with labels real = 1, reconstructed = 0.
///
/// The network emits a single logit; the sigmoid is applied in
/// [`score`](Self::score) and folded into the loss, which keeps the
/// gradient `σ(z) - y` exact when the output saturates.
#[derive(Debug, Clone)]
pub struct MasteryEvaluator {
    net: Network,
    adam: AdamConfig,
}

impl MasteryEvaluator {
    /// conv → relu → conv → relu → dense(1).
    pub fn new<R: Rng + ?Sized>(obs_shape: &[usize], cfg: &EvaluatorConfig, rng: &mut R) -> Result<Self> {
        let specs = [
            LayerSpec::conv(cfg.channels[0], cfg.kernel, cfg.stride, 0),
            LayerSpec::Relu,
            LayerSpec::conv(cfg.channels[1], cfg.kernel, cfg.stride, 0),
            LayerSpec::Relu,
            LayerSpec::dense(1),
        ];
        let net = Network::new(obs_shape, &specs, rng)?;
        Self::from_network(net, AdamConfig::with_lr(cfg.lr))
    }

    pub fn from_network(net: Network, adam: AdamConfig) -> Result<Self> {
        if net.output_shape().iter().product::<usize>() != 1 {
            return Err(Error::ShapeMismatch {
                context: "evaluator output",
                expected: vec![1],
                got: net.output_shape().to_vec(),
            });
        }
        Ok(MasteryEvaluator { net, adam })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    pub fn logit(&self, obs: &Observation) -> Result<f64> {
        Ok(self.net.infer(obs.tensor())?.data()[0])
    }

    pub fn score(&self, obs_hat: &Observation) -> Result<MasteryScore> {
        MasteryScore::new(sigmoid(self.logit(obs_hat)?))
    }

    /// Mean binary cross-entropy over `real ∪ fake` and its gradient.
    pub fn loss_and_gradients(
        &mut self,
        real: &[Observation],
        fake: &[Observation],
    ) -> Result<(f64, Gradients)> {
        if real.is_empty() || fake.is_empty() {
            return Err(Error::invalid("evaluator needs non-empty real and fake batches"));
        }
        let n = (real.len() + fake.len()) as f64;
        let mut grads = Gradients::zeros_like(&self.net);
        let mut loss = 0.0;
        let labelled = real.iter().map(|o| (o, 1.0)).chain(fake.iter().map(|o| (o, 0.0)));
        for (obs, label) in labelled {
            let z = self.net.forward(obs.tensor())?.data()[0];
            loss += bce_with_logit(z, label);
            let g = Tensor::new(self.net.output_shape().to_vec(), vec![(sigmoid(z) - label) / n])?;
            self.net.accumulate_param_grads(&g, &mut grads)?;
        }
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("evaluator loss ({loss})")));
        }
        Ok((loss, grads))
    }

    /// One Adam step; returns the loss before the step.
    pub fn train_step(&mut self, real: &[Observation], fake: &[Observation]) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(real, fake)?;
        self.net.adam_step(&grads, &self.adam)?;
        Ok(loss)
    }
}
