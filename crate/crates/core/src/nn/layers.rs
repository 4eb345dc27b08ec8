//! Layer specifications and their hand-derived forward/backward kernels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Weight initializer. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Init {
    /// Zero-mean normal with a fixed standard deviation.
    Normal { std: f64 },
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal,
}

impl Init {
    fn std(&self, fan_in: usize) -> f64 {
        match *self {
            Init::Normal { std } => std,
            Init::HeNormal => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected layer on `[batch, features]` input.
    Dense {
        units: usize,
        init: Init,
        #[serde(default)]
        weight_decay: f64,
    },
    /// 2-D convolution over `[batch, h, w, c]` input with zero padding.
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        #[serde(default)]
        weight_decay: f64,
    },
    Relu,
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time.
    Dropout {
        rate: f64,
    },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn weight_decay(&self) -> f64 {
        match self {
            LayerSpec::Dense { weight_decay, .. } | LayerSpec::Conv2d { weight_decay, .. } => {
                *weight_decay
            }
            _ => 0.0,
        }
    }

    /// Validates hyperparameters and computes the per-sample output shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let err = |message: String| Error::Shape {
            layer: index,
            kind: self.kind().to_string(),
            message,
        };
        match *self {
            LayerSpec::Dense {
                units,
                weight_decay,
                ..
            } => {
                if input.len() != 1 {
                    return Err(err(format!("expects flat input, got {input:?}")));
                }
                if units == 0 || !(weight_decay >= 0.0) {
                    return Err(err("units must be positive and weight decay >= 0".into()));
                }
                Ok(vec![units])
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
                weight_decay,
                ..
            } => {
                let [h, w, _] = image_dims(input).ok_or_else(|| {
                    err(format!("expects [h, w, c] input, got {input:?}"))
                })?;
                if filters == 0 || kernel == 0 || stride == 0 || !(weight_decay >= 0.0) {
                    return Err(err(
                        "filters, kernel and stride must be positive, weight decay >= 0".into(),
                    ));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(err(format!("input {h}x{w} smaller than kernel {kernel}")));
                }
                Ok(vec![
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                    filters,
                ])
            }
            LayerSpec::MaxPool2d { size, stride } => {
                let [h, w, c] = image_dims(input).ok_or_else(|| {
                    err(format!("expects [h, w, c] input, got {input:?}"))
                })?;
                if size == 0 || stride == 0 {
                    return Err(err("pool size and stride must be positive".into()));
                }
                if h < size || w < size {
                    return Err(err(format!("input {h}x{w} smaller than pool window {size}")));
                }
                Ok(vec![(h - size) / stride + 1, (w - size) / stride + 1, c])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(err(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Allocates and initializes `(weight, bias)` for parameterized layers.
    pub(crate) fn init_params(
        &self,
        input: &[usize],
        rng: &mut SeededRng,
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let (fan_in, fan_out, init) = match *self {
            LayerSpec::Dense { units, init, .. } => (input[0], units, init),
            LayerSpec::Conv2d {
                filters,
                kernel,
                init,
                ..
            } => (kernel * kernel * input[2], filters, init),
            _ => return None,
        };
        let normal = Normal::new(0.0, init.std(fan_in)).expect("finite std");
        let weight = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Some((weight, vec![0.0; fan_out]))
    }
}

fn image_dims(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [h, w, c] => Some([h, w, c]),
        _ => None,
    }
}

/// What a layer remembers from its forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    Mask(Vec<bool>),
    Argmax(Vec<usize>),
    Scale(Option<Vec<f64>>),
    Shape(Vec<usize>),
}

pub(crate) struct Forward {
    pub output: Tensor,
    pub cache: Option<Cache>,
}

/// Runs one layer forward. `rng` is consulted only by dropout in train mode.
pub(crate) fn forward(
    spec: &LayerSpec,
    params: Option<(&[f64], &[f64])>,
    input: Tensor,
    out_shape: &[usize],
    train: bool,
    rng: Option<&mut SeededRng>,
    want_cache: bool,
) -> Result<Forward> {
    let batch = input.batch();
    let mut shape = vec![batch];
    shape.extend_from_slice(out_shape);
    let (output, cache) = match *spec {
        LayerSpec::Dense { units, .. } => {
            let (w, b) = params.expect("dense params");
            let fan_in = input.row_len();
            let mut out = Vec::with_capacity(batch * units);
            for _ in 0..batch {
                out.extend_from_slice(b);
            }
            gemm(batch, fan_in, units, 1.0, input.data(), false, w, false, 1.0, &mut out);
            (out, want_cache.then(|| Cache::Input(input)))
        }
        LayerSpec::Conv2d {
            filters,
            kernel,
            stride,
            padding,
            ..
        } => {
            let (w, b) = params.expect("conv params");
            let geom = ConvGeom::new(input.shape(), out_shape, kernel, stride, padding);
            let mut out = vec![0.0; batch * geom.out_pixels() * filters];
            let mut cols = vec![0.0; geom.out_pixels() * geom.patch()];
            for n in 0..batch {
                geom.im2col(input.row(n), &mut cols);
                let y = &mut out[n * geom.out_pixels() * filters..(n + 1) * geom.out_pixels() * filters];
                for px in y.chunks_exact_mut(filters) {
                    px.copy_from_slice(b);
                }
                gemm(geom.out_pixels(), geom.patch(), filters, 1.0, &cols, false, w, false, 1.0, y);
            }
            (out, want_cache.then(|| Cache::Input(input)))
        }
        LayerSpec::Relu => {
            let mask: Vec<bool> = input.data().iter().map(|&x| x > 0.0).collect();
            let out = input
                .data()
                .iter()
                .zip(&mask)
                .map(|(&x, &keep)| if keep { x } else { 0.0 })
                .collect();
            (out, want_cache.then_some(Cache::Mask(mask)))
        }
        LayerSpec::MaxPool2d { size, stride } => {
            let [h, w, c] = image_dims(&input.shape()[1..]).expect("checked at construction");
            let (oh, ow) = (out_shape[0], out_shape[1]);
            let mut out = Vec::with_capacity(batch * oh * ow * c);
            let mut argmax = Vec::with_capacity(if want_cache { out.capacity() } else { 0 });
            let data = input.data();
            for n in 0..batch {
                let base = n * h * w * c;
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut best = base + ((oy * stride) * w + ox * stride) * c + ch;
                            for ky in 0..size {
                                for kx in 0..size {
                                    let idx =
                                        base + ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                                    if data[idx] > data[best] {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(data[best]);
                            if want_cache {
                                argmax.push(best);
                            }
                        }
                    }
                }
            }
            (out, want_cache.then_some(Cache::Argmax(argmax)))
        }
        LayerSpec::Dropout { rate } => {
            if !train || rate == 0.0 {
                (input.into_data(), want_cache.then_some(Cache::Scale(None)))
            } else {
                let rng = rng.ok_or_else(|| {
                    Error::State("train-mode dropout needs a random generator".into())
                })?;
                let keep = 1.0 / (1.0 - rate);
                let scale: Vec<f64> = (0..input.len())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                let out = input.data().iter().zip(&scale).map(|(x, s)| x * s).collect();
                (out, want_cache.then_some(Cache::Scale(Some(scale))))
            }
        }
        LayerSpec::Flatten => {
            let in_shape = input.shape().to_vec();
            (input.into_data(), want_cache.then_some(Cache::Shape(in_shape)))
        }
    };
    Ok(Forward {
        output: Tensor::new(shape, output)?,
        cache,
    })
}

/// Gradient with respect to a layer's weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Backpropagates `grad` (w.r.t. the layer output) through one layer.
pub(crate) fn backward(
    spec: &LayerSpec,
    params: Option<(&[f64], &[f64])>,
    cache: Cache,
    grad: Tensor,
    in_shape: &[usize],
) -> (Tensor, Option<ParamGrad>) {
    let batch = grad.batch();
    let mut shape = vec![batch];
    shape.extend_from_slice(in_shape);
    match (spec, cache) {
        (LayerSpec::Dense { units, .. }, Cache::Input(input)) => {
            let (w, _) = params.expect("dense params");
            let fan_in = input.row_len();
            let mut dw = vec![0.0; fan_in * units];
            gemm(fan_in, batch, *units, 1.0, input.data(), true, grad.data(), false, 0.0, &mut dw);
            let mut db = vec![0.0; *units];
            for row in grad.data().chunks_exact(*units) {
                db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
            }
            let mut dx = vec![0.0; batch * fan_in];
            gemm(batch, *units, fan_in, 1.0, grad.data(), false, w, true, 0.0, &mut dx);
            (
                Tensor::new(shape, dx).expect("shape"),
                Some(ParamGrad { weight: dw, bias: db }),
            )
        }
        (
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
                ..
            },
            Cache::Input(input),
        ) => {
            let (w, _) = params.expect("conv params");
            let out_shape = &grad.shape()[1..];
            let geom = ConvGeom::new(input.shape(), out_shape, *kernel, *stride, *padding);
            let (pixels, patch) = (geom.out_pixels(), geom.patch());
            let mut dw = vec![0.0; patch * filters];
            let mut db = vec![0.0; *filters];
            let mut dx = vec![0.0; input.len()];
            let mut cols = vec![0.0; pixels * patch];
            let mut dcols = vec![0.0; pixels * patch];
            let per_in = input.row_len();
            for n in 0..batch {
                let dy = grad.row(n);
                geom.im2col(input.row(n), &mut cols);
                gemm(patch, pixels, *filters, 1.0, &cols, true, dy, false, 1.0, &mut dw);
                for px in dy.chunks_exact(*filters) {
                    db.iter_mut().zip(px).for_each(|(d, g)| *d += g);
                }
                gemm(pixels, *filters, patch, 1.0, dy, false, w, true, 0.0, &mut dcols);
                geom.col2im(&dcols, &mut dx[n * per_in..(n + 1) * per_in]);
            }
            (
                Tensor::new(shape, dx).expect("shape"),
                Some(ParamGrad { weight: dw, bias: db }),
            )
        }
        (LayerSpec::Relu, Cache::Mask(mask)) => {
            let dx = grad
                .data()
                .iter()
                .zip(&mask)
                .map(|(&g, &keep)| if keep { g } else { 0.0 })
                .collect();
            (Tensor::new(shape, dx).expect("shape"), None)
        }
        (LayerSpec::MaxPool2d { .. }, Cache::Argmax(argmax)) => {
            let mut dx = vec![0.0; batch * in_shape.iter().product::<usize>()];
            for (&idx, &g) in argmax.iter().zip(grad.data()) {
                dx[idx] += g;
            }
            (Tensor::new(shape, dx).expect("shape"), None)
        }
        (LayerSpec::Dropout { .. }, Cache::Scale(scale)) => {
            let dx = match scale {
                None => grad.into_data(),
                Some(s) => grad.data().iter().zip(&s).map(|(g, k)| g * k).collect(),
            };
            (Tensor::new(shape, dx).expect("shape"), None)
        }
        (LayerSpec::Flatten, Cache::Shape(in_full)) => {
            (grad.reshape(in_full).expect("shape"), None)
        }
        (spec, _) => unreachable!("cache does not belong to a {} layer", spec.kind()),
    }
}

/// Index arithmetic shared by conv forward and backward.
struct ConvGeom {
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(in_shape: &[usize], out_shape: &[usize], kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            h: in_shape[1],
            w: in_shape[2],
            c: in_shape[3],
            oh: out_shape[0],
            ow: out_shape[1],
            kernel,
            stride,
            padding,
        }
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.kernel * self.kernel * self.c
    }

    /// Source pixel for output `(oy, ox)` and kernel tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.h && x < self.w).then(|| (y * self.w + x) * self.c)
    }

    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let patch = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let dst = &mut row[(ky * self.kernel + kx) * self.c..][..self.c];
                        match self.source(oy, ox, ky, kx) {
                            Some(src) => dst.copy_from_slice(&image[src..src + self.c]),
                            None => dst.fill(0.0),
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let patch = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        if let Some(src) = self.source(oy, ox, ky, kx) {
                            let g = &row[(ky * self.kernel + kx) * self.c..][..self.c];
                            image[src..src + self.c]
                                .iter_mut()
                                .zip(g)
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                }
            }
        }
    }
}
