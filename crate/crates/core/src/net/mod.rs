//! The patch classification network: parameters, forward traces, backward.

pub mod arch;
pub mod checkpoint;

use serde::{Deserialize, Serialize};

pub use arch::{ArchitectureSpec, INPUT_SIDE, PROFILES};
pub use checkpoint::{load, load_checkpoint, save, save_checkpoint, Checkpoint};

use crate::error::{Error, Result};
use crate::ops::{Layer, LayerAux, Mode};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

/// Which training phase a parameter set belongs to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Simple,
    Ecn,
}

/// Learnable parameters of the patch CNN plus bookkeeping that must survive
/// a checkpoint round trip.
#[derive(Clone, Debug)]
pub struct PatchNet<T> {
    arch: ArchitectureSpec,
    layers: Vec<Layer<T>>,
    /// Optimizer steps taken in the current phase.
    pub iteration: u64,
    pub phase: Phase,
    /// Patch-level validation accuracy recorded when the checkpoint was cut.
    pub val_accuracy: Option<f64>,
}

impl<T: Scalar> PatchNet<T> {
    /// Builds `profile` for `num_classes` classes with seeded initialization.
    pub fn build(profile: &str, num_classes: usize, seed_value: u64) -> Result<Self> {
        let arch = ArchitectureSpec::profile(profile, num_classes)?;
        Self::from_arch(arch, seed_value)
    }

    pub fn from_arch(arch: ArchitectureSpec, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed::derive(seed_value, &[seed::hash_str("init")]));
        let mut shape = arch.input_shape();
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (name, spec) in &arch.layers {
            let layer = Layer::new(name.clone(), *spec, &shape, &mut rng)?;
            shape = layer.output_shape();
            layers.push(layer);
        }
        Ok(PatchNet {
            arch,
            layers,
            iteration: 0,
            phase: Phase::Simple,
            val_accuracy: None,
        })
    }

    /// Same structure as `from_arch` with all parameters zero.
    pub fn zeroed(arch: ArchitectureSpec) -> Result<Self> {
        arch.validate()?;
        let mut shape = arch.input_shape();
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (name, spec) in &arch.layers {
            let (weight, bias) = match spec.param_shapes(&shape) {
                Some((ws, bs)) => (Some(Tensor::zeros(&ws)), Some(Tensor::zeros(&bs))),
                None => (None, None),
            };
            let layer = Layer {
                name: name.clone(),
                spec: *spec,
                input_shape: shape.clone(),
                weight,
                bias,
            };
            shape = layer.output_shape();
            layers.push(layer);
        }
        Ok(PatchNet {
            arch,
            layers,
            iteration: 0,
            phase: Phase::Simple,
            val_accuracy: None,
        })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn profile(&self) -> &str {
        &self.arch.profile
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// `(layer name, weight, bias)` for every parametric layer.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>, &Tensor<T>)> {
        self.layers.iter().filter_map(|l| match (&l.weight, &l.bias) {
            (Some(w), Some(b)) => Some((l.name.as_str(), w, b)),
            _ => None,
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .filter_map(|l| match (&mut l.weight, &mut l.bias) {
                (Some(w), Some(b)) => Some((l.name.as_str(), w, b)),
                _ => None,
            })
    }

    pub fn forward(&self, patch: &Tensor<T>, mode: Mode) -> Result<ForwardTrace<T>> {
        let expected = self.arch.input_shape();
        if patch.shape() != expected.as_slice() {
            return Err(Error::input(format!(
                "patch must be {expected:?}, got {:?}",
                patch.shape()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        activations.push(patch.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, a) = layer.forward(activations.last().unwrap(), mode, i)?;
            activations.push(y);
            aux.push(a);
        }
        Ok(ForwardTrace {
            names: self.layers.iter().map(|l| l.name.clone()).collect(),
            activations,
            aux,
        })
    }

    /// Test-mode logits.
    pub fn logits(&self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(patch, Mode::Test)?.logits().clone())
    }

    /// Back-propagates `grad_logits` through a recorded trace, adding parameter
    /// gradients into `grads`.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_logits: &[T],
        grads: &mut ParamBuffers<T>,
    ) -> Result<()> {
        if trace.aux.len() != self.layers.len() || trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::State(
                "backward called without a complete forward trace".to_string(),
            ));
        }
        if grads.slots.len() != self.layers.len() {
            return Err(Error::input("gradient buffers do not match this network"));
        }
        if grad_logits.len() != self.num_classes() {
            return Err(Error::input(format!(
                "expected {} logit gradients, got {}",
                self.num_classes(),
                grad_logits.len()
            )));
        }
        let mut upstream = Tensor::new(trace.logits().shape(), grad_logits.to_vec())?;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let need_input = i > 0;
            let slot = grads.slots[i]
                .as_mut()
                .map(|(w, b)| (w.as_mut_slice(), b.as_mut_slice()));
            let down = layer.backward(
                &trace.activations[i],
                &trace.activations[i + 1],
                &trace.aux[i],
                &upstream,
                slot,
                need_input,
            )?;
            match down {
                Some(g) => upstream = g,
                None => break,
            }
        }
        Ok(())
    }

    /// Adds buffered gradients into the parameters' gradient companions.
    pub fn accumulate_grads(&mut self, grads: &ParamBuffers<T>) {
        for (layer, slot) in self.layers.iter_mut().zip(&grads.slots) {
            if let (Some((gw, gb)), Some(w), Some(b)) = (slot, &mut layer.weight, &mut layer.bias) {
                w.accumulate_grad(gw);
                b.accumulate_grad(gb);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, w, b) in self.params_mut() {
            w.zero_grad();
            b.zero_grad();
        }
    }

    /// Element-type conversion of all parameters; bookkeeping is preserved.
    pub fn cast<U: Scalar>(&self) -> PatchNet<U> {
        PatchNet {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    spec: l.spec,
                    input_shape: l.input_shape.clone(),
                    weight: l.weight.as_ref().map(Tensor::cast),
                    bias: l.bias.as_ref().map(Tensor::cast),
                })
                .collect(),
            iteration: self.iteration,
            phase: self.phase,
            val_accuracy: self.val_accuracy,
        }
    }

    /// True when every parameter matches `other` bit for bit.
    pub fn bit_eq(&self, other: &PatchNet<T>) -> bool {
        self.arch == other.arch
            && self.iteration == other.iteration
            && self.phase == other.phase
            && self.val_accuracy.map(f64::to_bits) == other.val_accuracy.map(f64::to_bits)
            && self.params().zip(other.params()).all(|(a, b)| {
                a.0 == b.0
                    && a.1.shape() == b.1.shape()
                    && bits_eq(a.1.data(), b.1.data())
                    && bits_eq(a.2.data(), b.2.data())
            })
    }
}

fn bits_eq<T: Scalar>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.widen().to_bits() == y.widen().to_bits())
}

/// Activations of every layer from one forward pass, plus what backward needs.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace<T> {
    names: Vec<String>,
    activations: Vec<Tensor<T>>,
    aux: Vec<LayerAux<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.activations.last().expect("trace has at least the input")
    }

    /// Output of the named layer.
    pub fn output(&self, name: &str) -> Option<&Tensor<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        self.activations.get(i + 1)
    }

    /// fc5 responses after their ReLU.
    pub fn fc5(&self) -> &Tensor<T> {
        self.output("relu5").expect("every profile has relu5")
    }

    /// fc6 responses after their ReLU.
    pub fn fc6(&self) -> &Tensor<T> {
        self.output("relu6").expect("every profile has relu6")
    }

    /// The fc7 responses (logits).
    pub fn fc7(&self) -> &Tensor<T> {
        self.logits()
    }
}

/// One buffer per parameter tensor, aligned with the network's layers.
/// Used for gradients and for momentum velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBuffers<T> {
    slots: Vec<Option<(Vec<T>, Vec<T>)>>,
}

pub type Gradients<T> = ParamBuffers<T>;
pub type Velocity<T> = ParamBuffers<T>;

impl<T: Scalar> ParamBuffers<T> {
    pub fn zeros_like(net: &PatchNet<T>) -> Self {
        ParamBuffers {
            slots: net
                .layers
                .iter()
                .map(|l| match (&l.weight, &l.bias) {
                    (Some(w), Some(b)) => Some((vec![T::zero(); w.len()], vec![T::zero(); b.len()])),
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamBuffers<T>) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            if let (Some((aw, ab)), Some((bw, bb))) = (a, b) {
                aw.iter_mut().zip(bw).for_each(|(x, y)| *x += *y);
                ab.iter_mut().zip(bb).for_each(|(x, y)| *x += *y);
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (w, b) in self.slots.iter_mut().flatten() {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    /// `(layer index, weight buffer, bias buffer)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[T], &[T])> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|(w, b)| (i, w.as_slice(), b.as_slice())))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut Vec<T>, &mut Vec<T>)> {
        self.slots
            .iter_mut()
            .enumerate()
            .filter_map(|(i, s)| s.as_mut().map(|(w, b)| (i, w, b)))
    }

    pub fn flat(&self) -> Vec<T> {
        self.iter()
            .flat_map(|(_, w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamBuffers<U> {
        ParamBuffers {
            slots: self
                .slots
                .iter()
                .map(|s| {
                    s.as_ref().map(|(w, b)| {
                        (
                            w.iter().map(|v| U::lit(v.widen())).collect(),
                            b.iter().map(|v| U::lit(v.widen())).collect(),
                        )
                    })
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::loss::softmax;

    #[test]
    fn build_is_deterministic() {
        let a = PatchNet::<f32>::build("mini", 4, 7).unwrap();
        let b = PatchNet::<f32>::build("mini", 4, 7).unwrap();
        let c = PatchNet::<f32>::build("mini", 4, 8).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn init_biases_zero_and_weight_scale() {
        let net = PatchNet::<f64>::build("mini", 4, 1).unwrap();
        for (name, w, b) in net.params() {
            assert!(b.data().iter().all(|&v| v == 0.0), "{name}");
            let fan_in: usize = w.shape()[1..].iter().product();
            let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
            let expected = 2.0 / fan_in as f64;
            // loose: small tensors (conv1 has 200 weights)
            assert!((var / expected - 1.0).abs() < 0.35, "{name}: {var} vs {expected}");
        }
    }

    #[test]
    fn mini_forward_emits_k_logits() {
        let net = PatchNet::<f32>::build("mini", 4, 3).unwrap();
        let patch = Tensor::from_fn(&[1, 32, 32], |i| ((i % 7) as f32 - 3.0) / 10.0);
        let trace = net.forward(&patch, Mode::Test).unwrap();
        assert_eq!(trace.logits().len(), 4);
        assert_eq!(trace.fc5().len(), 64);
        assert_eq!(trace.fc6().len(), 32);
    }

    #[test]
    fn test_mode_is_pure() {
        let net = PatchNet::<f32>::build("mini", 4, 3).unwrap();
        let patch = Tensor::from_fn(&[1, 32, 32], |i| (i as f32).sin());
        assert_eq!(net.logits(&patch).unwrap(), net.logits(&patch).unwrap());
    }

    #[test]
    fn zero_network_is_uniform() {
        let mut net = PatchNet::<f64>::build("mini", 5, 3).unwrap();
        for (_, w, b) in net.params_mut() {
            w.data_mut().iter_mut().for_each(|v| *v = 0.0);
            b.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let patch = Tensor::from_fn(&[1, 32, 32], |i| (i as f64).cos());
        let z = net.logits(&patch).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(softmax(z.data()).iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn wrong_patch_shape() {
        let net = PatchNet::<f32>::build("mini", 4, 3).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[1, 40, 40]), Mode::Test),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let net = PatchNet::<f64>::build("mini", 4, 3).unwrap();
        let mut g = ParamBuffers::zeros_like(&net);
        let err = net.backward(&ForwardTrace::default(), &[0.0; 4], &mut g);
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn backward_accumulates() {
        let net = PatchNet::<f64>::build("mini", 3, 5).unwrap();
        let patch = Tensor::from_fn(&[1, 32, 32], |i| ((i * 37 % 11) as f64 - 5.0) / 5.0);
        let trace = net.forward(&patch, Mode::Test).unwrap();
        let up = [0.3, -0.2, 0.1];
        let mut twice = ParamBuffers::zeros_like(&net);
        net.backward(&trace, &up, &mut twice).unwrap();
        net.backward(&trace, &up, &mut twice).unwrap();
        let mut doubled = ParamBuffers::zeros_like(&net);
        net.backward(&trace, &[0.6, -0.4, 0.2], &mut doubled).unwrap();
        for (a, b) in twice.flat().iter().zip(doubled.flat()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
