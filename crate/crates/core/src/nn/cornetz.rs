use serde::{Deserialize, Serialize};

use super::{Init, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Name of the tap after the first (V1) block.
pub const V1_TAP: &str = "v1";

/// Architecture knobs for the four-block CORnet-Z network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornetConfig {
    /// Output channels of the V1, V2, V4 and IT convolutions.
    pub channels: [usize; 4],
    pub kernel: usize,
    pub pool: usize,
    /// Dropout rate applied right before the classifier.
    pub dropout: f64,
    pub init: Init,
}

impl Default for CornetConfig {
    fn default() -> Self {
        Self {
            channels: [64, 128, 256, 512],
            kernel: 3,
            pool: 2,
            dropout: 0.5,
            init: Init::HeNormal,
        }
    }
}

/// Four conv→ReLU→max-pool blocks (V1, V2, V4, IT), then flatten, dropout and
/// a single linear classifier. Convolutions use "same" padding and stride 1,
/// so each block only shrinks the image through its pooling stage.
pub fn build_cornetz(
    num_classes: usize,
    input_shape: &[usize],
    cfg: &CornetConfig,
    rng: &mut SeededRng,
) -> Result<Network> {
    let &[h, w, _] = input_shape else {
        return Err(Error::input(format!("CORnet-Z input must be [h, w, c], got {input_shape:?}")));
    };
    let min_side = cfg.pool.pow(4);
    if h < min_side || w < min_side {
        return Err(Error::input(format!(
            "input {h}x{w} too small for four {p}x{p} pooling stages (need at least {min_side})",
            p = cfg.pool
        )));
    }
    if num_classes < 2 {
        return Err(Error::input("need at least two classes"));
    }
    let mut specs = Vec::with_capacity(16);
    for &filters in &cfg.channels {
        specs.push(LayerSpec::Conv2d {
            filters,
            kernel: cfg.kernel,
            stride: 1,
            padding: cfg.kernel / 2,
            init: cfg.init,
            weight_decay: 0.0,
        });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::MaxPool2d {
            size: cfg.pool,
            stride: cfg.pool,
        });
    }
    specs.push(LayerSpec::Flatten);
    specs.push(LayerSpec::Dropout { rate: cfg.dropout });
    specs.push(LayerSpec::Dense {
        units: num_classes,
        init: cfg.init,
        weight_decay: 0.0,
    });
    Ok(Network::new(input_shape, specs, rng)?.with_tap(V1_TAP, 3))
}
