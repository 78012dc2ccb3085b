//! Checkpoints are pretty-printed JSON:
//!
//! ```text
//! { "format": "adazero-network", "version": 1,
//!   "network": { "input_shape": [...],
//!                "layers": [ { "kind": "conv2d", "kernel": 3, "stride": 2, "padding": 0,
//!                              "in_shape": [...], "out_shape": [...],
//!                              "weight": [...], "bias": [...] }, ... ],
//!                "adam": { "t": 12, "m": {...}, "v": {...} } } }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "adazero-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: Network,
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        network: net.clone(),
    };
    let text = serde_json::to_string_pretty(&ckpt)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    // Re-run shape validation; the file may have been edited by hand.
    let net = &ckpt.network;
    let rebuilt = Network::from_layers(net.input_shape(), net.layers().to_vec())?;
    let adam = net.adam_state();
    if rebuilt.param_count() != net.param_count()
        || !adam.m.shape_matches(net)
        || !adam.v.shape_matches(net)
    {
        return Err(Error::invalid("checkpoint parameter count mismatch"));
    }
    Ok(ckpt.network)
}
