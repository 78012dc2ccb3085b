use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{reconstruction_error, AutoencoderConfig, StateAutoencoder};
use crate::env::Action;
use crate::error::Result;
use crate::mastery::{EvaluatorConfig, MasteryEvaluator};
use crate::nn::{grad_check, log_softmax, sigmoid, softmax, GradCheckConfig, GradientReport, Tensor};
use crate::ppo::{PolicyConfig, PolicyNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheck {
    pub network: String,
    pub report: GradientReport,
}

/// Gradient-checks freshly initialized autoencoder, evaluator and policy
/// networks for `obs_shape` on a random image, each under the loss it is
/// trained with.
pub fn check_component_gradients(obs_shape: &[usize], seed: u64, cfg: GradCheckConfig) -> Result<Vec<NetworkCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = obs_shape.iter().product();
    let pixels: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let input = Tensor::new(obs_shape.to_vec(), pixels)?;
    let mut out = Vec::new();

    let mut ae = StateAutoencoder::new(obs_shape, &AutoencoderConfig::default(), &mut rng)?;
    let target = input.clone();
    let report = grad_check(
        ae.network_mut(),
        &input,
        |y| {
            let g = y.data().iter().zip(target.data()).map(|(a, s)| a - s).collect();
            (reconstruction_error(&target, y), Tensor::new(y.shape().to_vec(), g).expect("same shape"))
        },
        cfg,
    )?;
    out.push(NetworkCheck {
        network: "autoencoder".into(),
        report,
    });

    let mut ev = MasteryEvaluator::new(obs_shape, &EvaluatorConfig::default(), &mut rng)?;
    let report = grad_check(
        ev.network_mut(),
        &input,
        |y| {
            // Binary cross-entropy against the "real" label.
            let z = y.data()[0];
            let loss = (-z).exp().ln_1p();
            (loss, Tensor::new(y.shape().to_vec(), vec![sigmoid(z) - 1.0]).expect("scalar"))
        },
        cfg,
    )?;
    out.push(NetworkCheck {
        network: "evaluator".into(),
        report,
    });

    let mut policy = PolicyNet::new(obs_shape, Action::COUNT, &PolicyConfig::default(), &mut rng)?;
    let (action, advantage, ret) = (2, 1.3, 0.7);
    let report = grad_check(
        policy.network_mut(),
        &input,
        |y| {
            let k = Action::COUNT;
            let logits = &y.data()[..k];
            let v = y.data()[k];
            let loss = -advantage * log_softmax(logits)[action] + 0.5 * (v - ret) * (v - ret);
            let p = softmax(logits);
            let mut g: Vec<f64> = p.probs().iter().map(|pi| advantage * pi).collect();
            g[action] -= advantage;
            g.push(v - ret);
            (loss, Tensor::new(y.shape().to_vec(), g).expect("head shape"))
        },
        cfg,
    )?;
    out.push(NetworkCheck {
        network: "policy".into(),
        report,
    });
    Ok(out)
}
