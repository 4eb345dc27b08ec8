//! A small deterministic neural-network core with hand-written gradients.

mod cornetz;
mod gemm;
mod io;
mod layers;
mod loss;
mod sgd;

use std::ops::Range;

pub use cornetz::{build_cornetz, CornetConfig, V1_TAP};
pub use io::{read_container, write_container, ArrayHeader, Container};
pub use layers::{Init, LayerSpec, ParamGrad};
pub use loss::{cross_entropy_loss, softmax_rows};
pub use sgd::sgd_step;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use layers::Cache;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    weight: Vec<f64>,
    bias: Vec<f64>,
    cache: Option<Cache>,
}

impl Layer {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn has_params(&self) -> bool {
        !self.bias.is_empty()
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weight, &mut self.bias)
    }

    fn params(&self) -> Option<(&[f64], &[f64])> {
        self.has_params().then(|| (&self.weight[..], &self.bias[..]))
    }
}

/// Per-layer parameter gradients; `None` for parameter-free layers and for
/// layers outside the span that was backpropagated.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Option<ParamGrad>>);

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for g in self.0.iter_mut().flatten() {
            g.weight.iter_mut().for_each(|x| *x *= factor);
            g.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// All gradient entries, layer by layer, weight before bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.0
            .iter()
            .flatten()
            .flat_map(|g| g.weight.iter().chain(&g.bias).copied())
            .collect()
    }
}

/// Output of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Gradients,
    pub input: Tensor,
}

/// An ordered stack of layers with materialized parameters.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    taps: Vec<(String, usize)>,
    mode: Mode,
}

impl Network {
    /// Checks shape compatibility of consecutive layers and initializes
    /// parameters from `rng`. `input_shape` excludes the batch dimension.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut SeededRng) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::input(format!("bad network input shape {input_shape:?}")));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let out = spec.output_shape(i, &shape)?;
            if out.iter().any(|&d| d == 0) {
                return Err(Error::Shape {
                    layer: i,
                    kind: spec.kind().into(),
                    message: format!("output shape {out:?} has an empty dimension"),
                });
            }
            let (weight, bias) = spec.init_params(&shape, rng).unwrap_or_default();
            layers.push(Layer {
                spec,
                in_shape: shape,
                out_shape: out.clone(),
                weight,
                bias,
                cache: None,
            });
            shape = out;
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            taps: Vec::new(),
            mode: Mode::Train,
        })
    }

    /// Registers a named tap after layer `after - 1` (i.e. layers `0..after`
    /// produce the tapped activation).
    pub fn with_tap(mut self, name: &str, after: usize) -> Self {
        assert!(after <= self.layers.len());
        self.taps.push((name.to_string(), after));
        self
    }

    pub fn tap(&self, name: &str) -> Option<usize> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, i)| i)
    }

    pub fn taps(&self) -> &[(String, usize)] {
        &self.taps
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map_or(&self.input_shape[..], |l| &l.out_shape[..])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        &mut self.layers[i]
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weight before bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::input(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn check_input(&self, layer: usize, x: &Tensor) -> Result<()> {
        let expected = if layer == 0 {
            &self.input_shape
        } else {
            &self.layers[layer - 1].out_shape
        };
        if x.shape().len() < 2 || &x.shape()[1..] != expected.as_slice() {
            let kind = self
                .layers
                .get(layer)
                .map_or("output", |l| l.spec.kind())
                .to_string();
            return Err(Error::Shape {
                layer,
                kind,
                message: format!("expected [batch, {expected:?}] input, got {:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// Full forward pass, caching what backward needs.
    pub fn forward(&mut self, x: &Tensor, rng: Option<&mut SeededRng>) -> Result<Tensor> {
        self.forward_span(0..self.layers.len(), x, rng)
    }

    /// Forward through `span` only, caching intermediates of those layers.
    pub fn forward_span(
        &mut self,
        span: Range<usize>,
        x: &Tensor,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<Tensor> {
        self.check_input(span.start, x)?;
        let train = self.mode == Mode::Train;
        let mut act = x.clone();
        for i in span {
            let layer = &self.layers[i];
            let fwd = layers::forward(
                &layer.spec,
                layer.params(),
                act,
                &layer.out_shape,
                train,
                rng.as_deref_mut(),
                true,
            )?;
            self.layers[i].cache = fwd.cache;
            act = fwd.output;
        }
        Ok(act)
    }

    /// Eval-mode forward without touching any state.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.infer_span(0..self.layers.len(), x)
    }

    pub fn infer_span(&self, span: Range<usize>, x: &Tensor) -> Result<Tensor> {
        self.check_input(span.start, x)?;
        let mut act = x.clone();
        for i in span {
            let layer = &self.layers[i];
            act = layers::forward(&layer.spec, layer.params(), act, &layer.out_shape, false, None, false)?
                .output;
        }
        Ok(act)
    }

    pub fn backward(&mut self, upstream: Tensor) -> Result<Backward> {
        self.backward_span(0..self.layers.len(), upstream)
    }

    /// Backpropagates through `span`, consuming the caches left by the
    /// matching forward pass.
    pub fn backward_span(&mut self, span: Range<usize>, upstream: Tensor) -> Result<Backward> {
        let out_shape = if span.end == 0 {
            &self.input_shape
        } else {
            &self.layers[span.end - 1].out_shape
        };
        if upstream.shape().len() < 2 || &upstream.shape()[1..] != out_shape.as_slice() {
            return Err(Error::input(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.shape(),
                out_shape
            )));
        }
        if let Some(i) = span.clone().find(|&i| self.layers[i].cache.is_none()) {
            return Err(Error::State(format!(
                "backward through layer {i} ({}) without a cached forward pass",
                self.layers[i].spec.kind()
            )));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut grad = upstream;
        for i in span.rev() {
            let layer = &mut self.layers[i];
            let cache = layer.cache.take().expect("checked above");
            let (dx, pg) = layers::backward(&layer.spec, layer.params(), cache, grad, &layer.in_shape);
            grads[i] = pg;
            grad = dx;
        }
        Ok(Backward {
            params: Gradients(grads),
            input: grad,
        })
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(|l| l.cache = None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn rng() -> SeededRng {
        stream(7, Stream::CnnInit)
    }

    #[test]
    fn relu_forward() {
        let mut net = Network::new(&[3], vec![LayerSpec::Relu], &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = net.forward(&x, None).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn zero_rate_dropout_is_identity_in_train_mode() {
        let mut net =
            Network::new(&[4], vec![LayerSpec::Dropout { rate: 0.0 }], &mut rng()).unwrap();
        let x = Tensor::new(vec![2, 4], (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        assert_eq!(net.forward(&x, Some(&mut rng())).unwrap(), x);
    }

    #[test]
    fn identity_dense() {
        let mut net = Network::new(
            &[3],
            vec![LayerSpec::Dense { units: 3, init: Init::HeNormal, weight_decay: 0.0 }],
            &mut rng(),
        )
        .unwrap();
        let (w, b) = net.layer_mut(0).params_mut();
        w.fill(0.0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        b.fill(0.0);
        let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap();
        assert_eq!(net.forward(&x, None).unwrap(), x);
    }

    #[test]
    fn dense_weight_gradient_is_input_outer_ones() {
        let mut net = Network::new(
            &[3],
            vec![LayerSpec::Dense { units: 2, init: Init::HeNormal, weight_decay: 0.0 }],
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap();
        net.forward(&x, None).unwrap();
        let back = net.backward(Tensor::filled(&[1, 2], 1.0)).unwrap();
        let g = back.params.0[0].as_ref().unwrap();
        // W is [in, out]; dL/dW[i][j] = x[i] for loss = sum(y)
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(g.weight[i * 2 + j], x.data()[i]);
            }
        }
        assert_eq!(g.bias, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let specs = vec![
            LayerSpec::Conv2d { filters: 2, kernel: 3, stride: 1, padding: 1, init: Init::HeNormal, weight_decay: 0.0 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3, init: Init::HeNormal, weight_decay: 0.0 },
        ];
        let mut net = Network::new(&[4, 4, 1], specs, &mut rng()).unwrap();
        let x = Tensor::new(vec![2, 4, 4, 1], (0..32).map(|i| (i as f64).sin()).collect()).unwrap();
        net.forward(&x, None).unwrap();
        let back = net.backward(Tensor::zeros(&[2, 3])).unwrap();
        assert!(back.params.flatten().iter().all(|&g| g == 0.0));
        assert!(back.input.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut net = Network::new(&[2], vec![LayerSpec::Relu], &mut rng()).unwrap();
        let err = net.backward(Tensor::zeros(&[1, 2])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
        // caches are consumed by the first backward
        net.forward(&Tensor::zeros(&[1, 2]), None).unwrap();
        net.backward(Tensor::zeros(&[1, 2])).unwrap();
        assert!(net.backward(Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let specs = vec![
            LayerSpec::Relu,
            LayerSpec::Dense { units: 3, init: Init::HeNormal, weight_decay: 0.0 },
        ];
        let err = Network::new(&[4, 4, 1], specs, &mut rng()).unwrap_err();
        match err {
            Error::Shape { layer, kind, .. } => {
                assert_eq!(layer, 1);
                assert_eq!(kind, "dense");
            }
            e => panic!("unexpected {e}"),
        }
        let mut net = Network::new(&[3], vec![LayerSpec::Relu], &mut rng()).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[1, 4]), None),
            Err(Error::Shape { layer: 0, .. })
        ));
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(Network::new(&[3], vec![LayerSpec::Dropout { rate: 1.0 }], &mut rng()).is_err());
        assert!(Network::new(&[3], vec![LayerSpec::Dropout { rate: -0.1 }], &mut rng()).is_err());
        let bad_decay = LayerSpec::Dense { units: 2, init: Init::HeNormal, weight_decay: -1.0 };
        assert!(Network::new(&[3], vec![bad_decay], &mut rng()).is_err());
        let bad_stride = LayerSpec::Conv2d { filters: 1, kernel: 3, stride: 0, padding: 0, init: Init::HeNormal, weight_decay: 0.0 };
        assert!(Network::new(&[4, 4, 1], vec![bad_stride], &mut rng()).is_err());
    }

    #[test]
    fn eval_forward_is_pure_and_repeatable() {
        let specs = vec![
            LayerSpec::Dense { units: 5, init: Init::HeNormal, weight_decay: 0.0 },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { units: 2, init: Init::HeNormal, weight_decay: 0.0 },
        ];
        let mut net = Network::new(&[3], specs, &mut rng()).unwrap();
        net.set_mode(Mode::Eval);
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let a = net.infer(&x).unwrap();
        let b = net.infer(&x).unwrap();
        assert_eq!(a, b);
        // eval-mode caching forward agrees with the pure path and needs no rng
        assert_eq!(net.forward(&x, None).unwrap(), a);
    }

    #[test]
    fn train_dropout_without_rng_errors() {
        let mut net = Network::new(&[3], vec![LayerSpec::Dropout { rate: 0.5 }], &mut rng()).unwrap();
        assert!(matches!(net.forward(&Tensor::zeros(&[1, 3]), None), Err(Error::State(_))));
    }
}
