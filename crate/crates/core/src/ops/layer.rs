//! Layer descriptions and the per-layer forward/backward dispatch.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::activation::{dropout_backward, dropout_forward, relu_backward, relu_forward};
use super::conv::{conv2d_backward_input, conv2d_backward_params, conv2d_forward};
use super::fc::{fc_backward_input, fc_backward_params, fc_forward};
use super::lrn::{lrn_backward, lrn_forward, LrnParams};
use super::pool::{maxpool_backward, maxpool_forward, PoolGeometry};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    },
    MaxPool(PoolGeometry),
    Lrn(LrnParams),
    Relu,
    Fc {
        out_neurons: usize,
    },
    Dropout {
        ratio: f64,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            pad: 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool(_) => "maxpool",
            LayerSpec::Lrn(_) => "lrn",
            LayerSpec::Relu => "relu",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                if out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 {
                    return Err(Error::config("conv needs positive filters and kernel"));
                }
                if stride != 1 || pad != 0 {
                    return Err(Error::config(format!(
                        "only stride 1 / pad 0 convolutions are supported, got stride {stride} pad {pad}"
                    )));
                }
                Ok(())
            }
            LayerSpec::MaxPool(g) => g.validate(),
            LayerSpec::Lrn(p) => p.validate(),
            LayerSpec::Relu => Ok(()),
            LayerSpec::Fc { out_neurons } => {
                if out_neurons == 0 {
                    return Err(Error::config("fc layer needs at least one neuron"));
                }
                Ok(())
            }
            LayerSpec::Dropout { ratio } => {
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(Error::config(format!("dropout ratio {ratio} not in (0,1)")));
                }
                Ok(())
            }
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let chw = || match input[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::config(format!(
                "{} layer needs a C×H×W input, got {input:?}",
                self.kind()
            ))),
        };
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel: (kh, kw),
                ..
            } => {
                let (_, h, w) = chw()?;
                if h < kh || w < kw {
                    return Err(Error::config(format!(
                        "conv kernel {kh}×{kw} exceeds input {h}×{w}"
                    )));
                }
                Ok(vec![out_channels, h - kh + 1, w - kw + 1])
            }
            LayerSpec::MaxPool(g) => {
                let (c, h, w) = chw()?;
                Ok(vec![c, g.output_extent(h), g.output_extent(w)])
            }
            LayerSpec::Lrn(_) => {
                chw()?;
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::Fc { out_neurons } => Ok(vec![out_neurons]),
        }
    }

    /// Weight and bias shapes for parametric layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel: (kh, kw),
                ..
            } => Some((vec![out_channels, input[0], kh, kw], vec![out_channels])),
            LayerSpec::Fc { out_neurons } => {
                let fan_in = input.iter().product();
                Some((vec![out_neurons, fan_in], vec![out_neurons]))
            }
            _ => None,
        }
    }
}

/// Forward mode. Dropout masks in training are a function of the seed, so a
/// training forward is still a pure function of its inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Test,
}

/// What a layer's backward rule needs beyond its input and output.
#[derive(Clone, Debug)]
pub enum LayerAux<T> {
    None,
    Argmax(Vec<usize>),
    LrnScale(Vec<T>),
    DropoutMask(Option<Vec<T>>),
}

#[derive(Clone, Debug)]
pub struct Layer<T> {
    pub name: String,
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer with zero biases and N(0, 2/fan_in) weights.
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        spec: LayerSpec,
        input_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        spec.output_shape(input_shape)?;
        let (weight, bias) = match spec.param_shapes(input_shape) {
            Some((ws, bs)) => {
                let fan_in: usize = ws[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| Error::config(e.to_string()))?;
                let w = Tensor::from_fn(&ws, |_| T::lit(normal.sample(rng)));
                (Some(w), Some(Tensor::zeros(&bs)))
            }
            None => (None, None),
        };
        Ok(Layer {
            name: name.into(),
            spec,
            input_shape: input_shape.to_vec(),
            weight,
            bias,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.spec
            .output_shape(&self.input_shape)
            .expect("validated at construction")
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_ref().map_or(0, Tensor::len) + self.bias.as_ref().map_or(0, Tensor::len)
    }

    fn params(&self) -> Result<(&Tensor<T>, &Tensor<T>)> {
        match (&self.weight, &self.bias) {
            (Some(w), Some(b)) => Ok((w, b)),
            _ => Err(Error::State(format!("layer {} has no parameters", self.name))),
        }
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode, index: usize) -> Result<(Tensor<T>, LayerAux<T>)> {
        if input.shape() != self.input_shape.as_slice()
            && !(matches!(self.spec, LayerSpec::Fc { .. })
                && input.len() == self.input_shape.iter().product::<usize>())
        {
            return Err(Error::input(format!(
                "layer {} expects input {:?}, got {:?}",
                self.name,
                self.input_shape,
                input.shape()
            )));
        }
        match self.spec {
            LayerSpec::Conv { .. } => {
                let (w, b) = self.params()?;
                Ok((conv2d_forward(input, w, b)?, LayerAux::None))
            }
            LayerSpec::MaxPool(g) => {
                let (y, idx) = maxpool_forward(input, g)?;
                Ok((y, LayerAux::Argmax(idx)))
            }
            LayerSpec::Lrn(p) => {
                let (y, scale) = lrn_forward(input, p)?;
                Ok((y, LayerAux::LrnScale(scale)))
            }
            LayerSpec::Relu => Ok((relu_forward(input), LayerAux::None)),
            LayerSpec::Fc { .. } => {
                let (w, b) = self.params()?;
                Ok((fc_forward(input, w, b)?, LayerAux::None))
            }
            LayerSpec::Dropout { ratio } => {
                let (y, mask) = match mode {
                    Mode::Test => dropout_forward::<T, rand_chacha::ChaCha8Rng>(input, ratio, None)?,
                    Mode::Train { seed: s } => {
                        let mut rng = seed::rng(seed::derive(s, &[index as u64]));
                        dropout_forward(input, ratio, Some(&mut rng))?
                    }
                };
                Ok((y, LayerAux::DropoutMask(mask)))
            }
        }
    }

    /// Accumulates parameter gradients into `param_grads` (weight, bias) and
    /// returns the input gradient when `need_input` is set.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        aux: &LayerAux<T>,
        grad_out: &Tensor<T>,
        param_grads: Option<(&mut [T], &mut [T])>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let state = |what: &str| {
            Error::State(format!(
                "layer {} ({}) has no recorded {what}; run forward first",
                self.name,
                self.spec.kind()
            ))
        };
        match self.spec {
            LayerSpec::Conv { .. } => {
                let (w, _) = self.params()?;
                if let Some((gw, gb)) = param_grads {
                    conv2d_backward_params(input, w, grad_out, gw, gb)?;
                }
                need_input
                    .then(|| conv2d_backward_input(input.shape(), w, grad_out))
                    .transpose()
            }
            LayerSpec::Fc { .. } => {
                let (w, _) = self.params()?;
                if let Some((gw, gb)) = param_grads {
                    fc_backward_params(input, grad_out, gw, gb)?;
                }
                need_input
                    .then(|| fc_backward_input(input.shape(), w, grad_out))
                    .transpose()
            }
            LayerSpec::MaxPool(_) => {
                let LayerAux::Argmax(idx) = aux else {
                    return Err(state("argmax routing"));
                };
                maxpool_backward(input.shape(), idx, grad_out).map(Some)
            }
            LayerSpec::Lrn(p) => {
                let LayerAux::LrnScale(scale) = aux else {
                    return Err(state("LRN denominators"));
                };
                lrn_backward(input, output, scale, grad_out, p).map(Some)
            }
            LayerSpec::Relu => relu_backward(output, grad_out).map(Some),
            LayerSpec::Dropout { .. } => {
                let LayerAux::DropoutMask(mask) = aux else {
                    return Err(state("dropout mask"));
                };
                dropout_backward(mask.as_deref(), grad_out).map(Some)
            }
        }
    }
}
