//! A pooled classifier whose input gradient is exactly zero at known pixels.

use super::rng;
use ndreg::nn::{Init, LayerSpec, Mode, Network};
use ndreg::Tensor;
use rand::seq::SliceRandom;

/// 2×2 max pooling in front of the classifier: every non-maximal pixel of a
/// pooling window has an exactly zero input gradient.
pub fn pooled_net(classes: usize, seed: u64) -> Network {
    let mut r = rng(seed);
    let specs = vec![
        LayerSpec::MaxPool2d { size: 2, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { units: classes, init: Init::Normal { std: 1.0 }, weight_decay: 0.0 },
    ];
    let mut net = Network::new(&[4, 4, 3], specs, &mut r).unwrap();
    net.set_mode(Mode::Eval);
    net
}

/// Distinct pixel values in [0, 1], so every pooling window has one maximum.
pub fn distinct_images(n: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let mut v: Vec<f64> = (0..n * 48).map(|i| (i as f64 + 0.5) / (n * 48) as f64).collect();
    v.shuffle(&mut r);
    Tensor::new(vec![n, 4, 4, 3], v).unwrap()
}

/// Pixels that are not the maximum of their 2×2 window within their channel.
pub fn non_maximal(images: &Tensor) -> Vec<bool> {
    let d = images.data();
    let at = |b: usize, y: usize, x: usize, c: usize| ((b * 4 + y) * 4 + x) * 3 + c;
    let mut out = vec![false; d.len()];
    for b in 0..images.batch() {
        for c in 0..3 {
            for wy in 0..2 {
                for wx in 0..2 {
                    let cells: Vec<usize> =
                        (0..4).map(|k| at(b, wy * 2 + k / 2, wx * 2 + k % 2, c)).collect();
                    let best = *cells.iter().max_by(|&&p, &&q| d[p].total_cmp(&d[q])).unwrap();
                    cells.iter().filter(|&&p| p != best).for_each(|&p| out[p] = true);
                }
            }
        }
    }
    out
}
