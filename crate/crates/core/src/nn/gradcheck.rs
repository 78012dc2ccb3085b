use serde::{Deserialize, Serialize};

use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step. Near `cbrt(f64::EPSILON)`, which balances
    /// truncation against round-off for losses of order one to a hundred.
    pub step: f64,
    /// Lower bound on the relative-error denominator. Components whose
    /// true magnitude sits below this are compared in absolute terms, so
    /// round-off in the finite difference (about `eps * |loss| / step`)
    /// does not masquerade as a backward bug.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub layer: usize,
    pub block: ParamBlock,
    pub len: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub params_checked: usize,
    pub blocks: Vec<BlockError>,
}

/// Compares backward-pass gradients with central finite differences of
/// `loss_fn(net(input))` for every parameter.
///
/// `loss_fn` returns the scalar loss and its gradient with respect to
/// the network output.
pub fn grad_check<F>(
    net: &mut Network,
    input: &Tensor,
    loss_fn: F,
    cfg: GradCheckConfig,
) -> Result<GradientReport>
where
    F: Fn(&Tensor) -> (f64, Tensor),
{
    let y = net.forward(input)?;
    let (_, dy) = loss_fn(&y);
    let analytic = net.backward(&dy)?;

    let mut report = GradientReport {
        max_relative_error: 0.0,
        params_checked: 0,
        blocks: Vec::new(),
    };
    let eval = |net: &Network| -> Result<f64> { Ok(loss_fn(&net.infer(input)?).0) };

    for layer_idx in 0..net.layers().len() {
        for block in [ParamBlock::Weight, ParamBlock::Bias] {
            let grads = match block {
                ParamBlock::Weight => &analytic.blocks[layer_idx].weight,
                ParamBlock::Bias => &analytic.blocks[layer_idx].bias,
            };
            if grads.is_empty() {
                continue;
            }
            let mut worst_rel: f64 = 0.0;
            let mut worst_abs: f64 = 0.0;
            for (i, &a) in grads.iter().enumerate() {
                let original = param(net, layer_idx, block, i);
                set_param(net, layer_idx, block, i, original + cfg.step);
                let plus = eval(net)?;
                set_param(net, layer_idx, block, i, original - cfg.step);
                let minus = eval(net)?;
                set_param(net, layer_idx, block, i, original);
                let numeric = (plus - minus) / (2.0 * cfg.step);
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
                worst_rel = worst_rel.max(rel);
                worst_abs = worst_abs.max(abs);
            }
            report.params_checked += grads.len();
            report.max_relative_error = report.max_relative_error.max(worst_rel);
            report.blocks.push(BlockError {
                layer: layer_idx,
                block,
                len: grads.len(),
                max_relative_error: worst_rel,
                max_abs_error: worst_abs,
            });
        }
    }
    Ok(report)
}

fn param(net: &Network, layer: usize, block: ParamBlock, i: usize) -> f64 {
    let l = &net.layers()[layer];
    match block {
        ParamBlock::Weight => l.weight[i],
        ParamBlock::Bias => l.bias[i],
    }
}

fn set_param(net: &mut Network, layer: usize, block: ParamBlock, i: usize, v: f64) {
    let l = &mut net.layers_mut()[layer];
    match block {
        ParamBlock::Weight => l.weight[i] = v,
        ParamBlock::Bias => l.bias[i] = v,
    }
}
