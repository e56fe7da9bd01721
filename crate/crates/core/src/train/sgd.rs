//! Learning-rate schedule and the momentum SGD update.

use super::SgdConfig;
use crate::error::{Error, Result};
use crate::net::{Gradients, PatchNet, Velocity};
use crate::tensor::Scalar;

/// `base_lr / drop_factor^floor(iteration / drop_every)`.
pub fn lr_at(cfg: &SgdConfig, iteration: u64) -> f64 {
    let drops = (iteration / cfg.lr_drop_every.max(1)) as i32;
    cfg.base_lr / cfg.lr_drop_factor.powi(drops)
}

/// One parameter tensor: `v ← μv − lr(g + λw)`, `w ← w + v`.
pub fn sgd_update<T: Scalar>(w: &mut [T], g: &[T], v: &mut [T], lr: f64, momentum: f64, decay: f64) {
    let (lr, mu, lambda) = (T::lit(lr), T::lit(momentum), T::lit(decay));
    for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v - lr * (*g + lambda * *w);
        *w += *v;
    }
}

/// Updates every parameter of `net` with learning rate `lr_at(iteration)`.
/// A non-finite gradient aborts before any parameter is touched.
pub fn sgd_step<T: Scalar>(
    net: &mut PatchNet<T>,
    grads: &Gradients<T>,
    velocity: &mut Velocity<T>,
    cfg: &SgdConfig,
    iteration: u64,
) -> Result<()> {
    let names: Vec<String> = net.params().map(|(n, _, _)| n.to_string()).collect();
    for ((_, gw, gb), name) in grads.iter().zip(&names) {
        if let Some(bad) = gw.iter().chain(gb).find(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                iteration,
                layer: name.clone(),
                message: format!("non-finite gradient ({bad})"),
            });
        }
    }
    let lr = lr_at(cfg, iteration);
    let bias_decay = if cfg.decay_biases { cfg.weight_decay } else { 0.0 };
    for ((_, w, b), ((_, gw, gb), (_, vw, vb))) in net.params_mut().zip(grads.iter().zip(velocity.iter_mut())) {
        sgd_update(w.data_mut(), gw, vw, lr, cfg.momentum, cfg.weight_decay);
        sgd_update(b.data_mut(), gb, vb, lr, cfg.momentum, bias_decay);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule() {
        let cfg = SgdConfig::default();
        assert_eq!(lr_at(&cfg, 0), 0.01);
        assert!((lr_at(&cfg, 99_999) - 0.01).abs() < 1e-18);
        assert!((lr_at(&cfg, 100_000) - 0.001).abs() < 1e-15);
        assert!((lr_at(&cfg, 250_000) - 0.0001).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for it in (0..1_000_000).step_by(7919) {
            let lr = lr_at(&cfg, it);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn one_step_hand_value() {
        let (mut w, mut v) = ([1.0f64], [0.0]);
        sgd_update(&mut w, &[0.5], &mut v, 0.1, 0.9, 0.0);
        assert!((v[0] + 0.05).abs() < 1e-15);
        assert!((w[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn pure_decay() {
        let (mut w, mut v) = ([1.0f64], [0.0]);
        sgd_update(&mut w, &[0.0], &mut v, 0.1, 0.0, 0.1);
        assert!((w[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn null_update_is_identity() {
        let mut net = PatchNet::<f64>::build("mini", 3, 1).unwrap();
        let before = net.clone();
        let grads = Gradients::zeros_like(&net);
        let mut vel = Velocity::zeros_like(&net);
        let cfg = SgdConfig { weight_decay: 0.0, ..SgdConfig::default() };
        sgd_step(&mut net, &grads, &mut vel, &cfg, 0).unwrap();
        assert!(net.bit_eq(&before));
    }

    #[test]
    fn bias_decay_flag() {
        let mut net = PatchNet::<f64>::build("mini", 3, 1).unwrap();
        for (_, _, b) in net.params_mut() {
            *b = Tensor::full(b.shape(), 1.0);
        }
        let grads = Gradients::zeros_like(&net);
        let mut vel = Velocity::zeros_like(&net);
        let cfg = SgdConfig { decay_biases: false, ..SgdConfig::default() };
        sgd_step(&mut net, &grads, &mut vel, &cfg, 0).unwrap();
        assert!(net.params().all(|(_, _, b)| b.data().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut net = PatchNet::<f32>::build("mini", 3, 1).unwrap();
        let before = net.clone();
        let mut grads = Gradients::zeros_like(&net);
        grads.iter_mut().nth(2).unwrap().1[0] = f32::NAN;
        let mut vel = Velocity::zeros_like(&net);
        match sgd_step(&mut net, &grads, &mut vel, &SgdConfig::default(), 17) {
            Err(Error::Numeric { iteration, layer, .. }) => {
                assert_eq!(iteration, 17);
                assert_eq!(layer, "conv3");
            }
            other => panic!("{other:?}"),
        }
        assert!(net.bit_eq(&before));
    }
}
