//! State autoencoder whose reconstruction error is the intrinsic reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Gradients, LayerSpec, Network, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Output channels of the two encoder convolutions.
    pub channels: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
    pub bottleneck: usize,
    pub lr: f64,
    /// Observations sampled from the latest rollout per gradient step.
    pub batch_size: usize,
    /// Gradient steps per policy update.
    pub steps_per_update: usize,
    /// Divide intrinsic rewards by a running standard deviation.
    pub normalize: bool,
    /// Initial bias of the decoder's last dense layer, as a logit. Grid
    /// images are mostly empty, so starting near zero output keeps the
    /// first steps from collapsing the bottleneck.
    pub output_bias: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            channels: [8, 16],
            kernel: 3,
            stride: 2,
            bottleneck: 64,
            lr: 1e-3,
            batch_size: 64,
            steps_per_update: 1,
            normalize: false,
            output_bias: -5.0,
        }
    }
}

/// `obs_hat` is the decoder output; `r_int = ½‖s − ŝ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub obs_hat: Observation,
    pub r_int: f64,
}

/// `½ Σ (s − ŝ)²` over all pixels.
pub fn reconstruction_error(obs: &Tensor, obs_hat: &Tensor) -> f64 {
    0.5 * obs
        .data()
        .iter()
        .zip(obs_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct StateAutoencoder {
    net: Network,
    adam: AdamConfig,
}

impl StateAutoencoder {
    /// conv → relu → conv → relu → dense(bottleneck) → relu →
    /// dense(image) → sigmoid.
    pub fn new<R: Rng + ?Sized>(obs_shape: &[usize], cfg: &AutoencoderConfig, rng: &mut R) -> Result<Self> {
        let specs = [
            LayerSpec::conv(cfg.channels[0], cfg.kernel, cfg.stride, 0),
            LayerSpec::Relu,
            LayerSpec::conv(cfg.channels[1], cfg.kernel, cfg.stride, 0),
            LayerSpec::Relu,
            LayerSpec::dense(cfg.bottleneck),
            LayerSpec::Relu,
            LayerSpec::Dense {
                out_shape: obs_shape.to_vec(),
            },
            LayerSpec::Sigmoid,
        ];
        if !cfg.output_bias.is_finite() {
            return Err(Error::invalid("autoencoder output_bias must be finite"));
        }
        let mut net = Network::new(obs_shape, &specs, rng)?;
        let n = net.layers().len();
        net.layers_mut()[n - 2].bias.iter_mut().for_each(|b| *b = cfg.output_bias);
        Self::from_network(net, AdamConfig::with_lr(cfg.lr))
    }

    /// Wraps an arbitrary network. Its output must have the input's shape
    /// and end in a sigmoid so reconstructions stay inside `[0, 1]`.
    pub fn from_network(net: Network, adam: AdamConfig) -> Result<Self> {
        if net.output_shape() != net.input_shape() {
            return Err(Error::ShapeMismatch {
                context: "autoencoder output",
                expected: net.input_shape().to_vec(),
                got: net.output_shape().to_vec(),
            });
        }
        if !matches!(net.layers().last().map(|l| l.kind), Some(crate::nn::LayerKind::Sigmoid)) {
            return Err(Error::invalid("autoencoder must end with a sigmoid layer"));
        }
        Ok(StateAutoencoder { net, adam })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn adam(&self) -> &AdamConfig {
        &self.adam
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    pub fn reconstruct(&self, obs: &Observation) -> Result<Reconstruction> {
        let out = self.net.infer(obs.tensor())?;
        let r_int = reconstruction_error(obs.tensor(), &out);
        Ok(Reconstruction {
            obs_hat: Observation::new(out)?,
            r_int,
        })
    }

    /// Mean reconstruction loss over `batch` and its parameter gradient.
    pub fn loss_and_gradients(&mut self, batch: &[Observation]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::invalid("autoencoder batch is empty"));
        }
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.net);
        let mut loss = 0.0;
        for obs in batch {
            let out = self.net.forward(obs.tensor())?;
            loss += reconstruction_error(obs.tensor(), &out);
            let g: Vec<f64> = out
                .data()
                .iter()
                .zip(obs.tensor().data())
                .map(|(y, s)| (y - s) / n)
                .collect();
            let g = Tensor::new(out.shape().to_vec(), g)?;
            self.net.accumulate_param_grads(&g, &mut grads)?;
        }
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("autoencoder loss ({loss})")));
        }
        Ok((loss, grads))
    }

    /// One Adam step on the mean loss; returns the loss before the step.
    pub fn train_step(&mut self, batch: &[Observation]) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(batch)?;
        self.net.adam_step(&grads, &self.adam)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, LayerKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(values: &[f64], h: usize, w: usize) -> Observation {
        Observation::new(Tensor::new(vec![1, h, w], values.to_vec()).unwrap()).unwrap()
    }

    /// dense(identity * 60, bias -30) → sigmoid maps {0, 1} pixels to
    /// sigmoid(±30), which rounds to within 1e-13 of the input.
    fn near_identity(n: usize, gain: f64) -> StateAutoencoder {
        let mut weight = vec![0.0; n * n];
        for i in 0..n {
            weight[i * n + i] = 2.0 * gain;
        }
        let shape = vec![1, 1, n];
        let layers = vec![
            Layer {
                kind: LayerKind::Dense,
                in_shape: shape.clone(),
                out_shape: shape.clone(),
                weight,
                bias: vec![-gain; n],
            },
            Layer {
                kind: LayerKind::Sigmoid,
                in_shape: shape.clone(),
                out_shape: shape.clone(),
                weight: vec![],
                bias: vec![],
            },
        ];
        let net = Network::from_layers(&shape, layers).unwrap();
        StateAutoencoder::from_network(net, AdamConfig::default()).unwrap()
    }

    #[test]
    fn engineered_identity_has_zero_error() {
        // sigmoid(±800) is exactly 1.0 / 0.0 in f64.
        let ae = near_identity(4, 800.0);
        let s = obs(&[0.0, 1.0, 1.0, 0.0], 1, 4);
        let rec = ae.reconstruct(&s).unwrap();
        assert_eq!(rec.r_int, 0.0);
        assert_eq!(rec.obs_hat, s);
    }

    #[test]
    fn zero_decoder_gives_half_sum_of_squares() {
        // Sigmoid can't output 0, so check the formula on the raw error.
        let s = Tensor::new(vec![1, 2, 2], vec![0.5, 1.0, 0.0, 0.25]).unwrap();
        let zero = Tensor::zeros(&[1, 2, 2]);
        let q = s.sum_of_squares();
        assert_eq!(reconstruction_error(&s, &zero), q / 2.0);
    }

    #[test]
    fn reconstruct_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ae = StateAutoencoder::new(&[1, 9, 9], &AutoencoderConfig::default(), &mut rng).unwrap();
        let s = obs(&(0..81).map(|i| (i % 3) as f64 / 2.0).collect::<Vec<_>>(), 9, 9);
        let rec = ae.reconstruct(&s).unwrap();
        let direct = ae.network().infer(s.tensor()).unwrap();
        assert_eq!(rec.r_int, reconstruction_error(s.tensor(), &direct));
        assert!(rec.r_int > 0.0);
        assert!(rec.obs_hat.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ae.reconstruct(&s).unwrap(), rec);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ae = StateAutoencoder::new(&[1, 9, 9], &AutoencoderConfig::default(), &mut rng).unwrap();
        let wrong = obs(&[0.0; 64], 8, 8);
        assert!(matches!(ae.reconstruct(&wrong), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn identical_batch_matches_single_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ae = StateAutoencoder::new(&[1, 7, 7], &AutoencoderConfig::default(), &mut rng).unwrap();
        let s = obs(&(0..49).map(|i| if i == 10 { 1.0 } else { 0.0 }).collect::<Vec<_>>(), 7, 7);
        let (l1, g1) = ae.loss_and_gradients(std::slice::from_ref(&s)).unwrap();
        let (l4, g4) = ae.loss_and_gradients(&[s.clone(), s.clone(), s.clone(), s]).unwrap();
        assert!((l1 - l4).abs() < 1e-12);
        for (a, b) in g1.values().zip(g4.values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = AutoencoderConfig {
            lr: 0.0,
            ..Default::default()
        };
        let mut ae = StateAutoencoder::new(&[1, 7, 7], &cfg, &mut rng).unwrap();
        let before = ae.network().layers().to_vec();
        let s = obs(&[0.5; 49], 7, 7);
        let l0 = ae.train_step(std::slice::from_ref(&s)).unwrap();
        let l1 = ae.train_step(std::slice::from_ref(&s)).unwrap();
        assert_eq!(ae.network().layers(), &before[..]);
        assert_eq!(l0, l1);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ae = StateAutoencoder::new(&[1, 7, 7], &AutoencoderConfig::default(), &mut rng).unwrap();
        assert!(ae.train_step(&[]).is_err());
    }

    #[test]
    fn loss_falls_on_a_fixed_observation() {
        let cfg = AutoencoderConfig {
            lr: 1e-3,
            ..Default::default()
        };
        let s = obs(&(0..81).map(|i| if i == 40 { 1.0 } else { 0.0 }).collect::<Vec<_>>(), 9, 9);
        let mut decreasing = 0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ae = StateAutoencoder::new(&[1, 9, 9], &cfg, &mut rng).unwrap();
            let losses: Vec<f64> = (0..100)
                .map(|_| ae.train_step(std::slice::from_ref(&s)).unwrap())
                .collect();
            if losses.windows(2).all(|w| w[1] < w[0]) {
                decreasing += 1;
            }
        }
        assert!(decreasing >= 9, "strictly decreasing in {decreasing}/10 seeds");
    }
}
