use super::{Gradients, Network};
use crate::error::{Error, Result};

/// Plain SGD with per-layer L2 decay: `θ ← θ − lr·(grad + decay·θ)`.
///
/// Layers whose gradient entry is `None` are left untouched, decay included.
/// All gradients are checked before anything is written, so a non-finite
/// gradient leaves the network unchanged.
pub fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64, step: u64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::input(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if grads.0.len() != net.layers().len() {
        return Err(Error::input(format!(
            "{} gradient slots for {} layers",
            grads.0.len(),
            net.layers().len()
        )));
    }
    for (i, (layer, g)) in net.layers().iter().zip(&grads.0).enumerate() {
        let Some(g) = g else { continue };
        if g.weight.len() != layer.weight().len() || g.bias.len() != layer.bias().len() {
            return Err(Error::input(format!("gradient shape mismatch at layer {i}")));
        }
        if !g.weight.iter().chain(&g.bias).all(|x| x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                layer: i,
                kind: layer.spec().kind().into(),
                step,
            });
        }
    }
    if lr == 0.0 {
        return Ok(());
    }
    for (i, g) in grads.0.iter().enumerate() {
        let Some(g) = g else { continue };
        let layer = net.layer_mut(i);
        let decay = layer.spec().weight_decay();
        let (w, b) = layer.params_mut();
        for (p, d) in w.iter_mut().zip(&g.weight).chain(b.iter_mut().zip(&g.bias)) {
            *p -= lr * (d + decay * *p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, LayerSpec, ParamGrad};
    use crate::rng::{stream, Stream};

    fn scalar_net(decay: f64) -> Network {
        let mut net = Network::new(
            &[1],
            vec![LayerSpec::Dense { units: 1, init: Init::Normal { std: 1.0 }, weight_decay: decay }],
            &mut stream(0, Stream::CnnInit),
        )
        .unwrap();
        let (w, b) = net.layer_mut(0).params_mut();
        w[0] = 1.0;
        b[0] = 0.0;
        net
    }

    fn grad(w: f64) -> Gradients {
        Gradients(vec![Some(ParamGrad { weight: vec![w], bias: vec![0.0] })])
    }

    #[test]
    fn plain_step() {
        let mut net = scalar_net(0.0);
        sgd_step(&mut net, &grad(2.0), 0.1, 0).unwrap();
        assert!((net.layers()[0].weight()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn decay_only_step() {
        let mut net = scalar_net(0.00001);
        sgd_step(&mut net, &grad(0.0), 0.01, 0).unwrap();
        assert!((net.layers()[0].weight()[0] - (1.0 - 1e-7)).abs() < 1e-16);
    }

    #[test]
    fn zero_lr_is_bitwise_noop() {
        let mut net = scalar_net(0.5);
        let before = net.flat_params();
        sgd_step(&mut net, &grad(3.0), 0.0, 0).unwrap();
        assert_eq!(before, net.flat_params());
    }

    #[test]
    fn non_finite_gradient_names_layer_and_step() {
        let mut net = scalar_net(0.0);
        let before = net.flat_params();
        let err = sgd_step(&mut net, &grad(f64::NAN), 0.1, 42).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 0, step: 42, .. }));
        assert_eq!(before, net.flat_params());
    }
}
