//! Architecture profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{LayerSpec, LrnParams, PoolGeometry};

pub const INPUT_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub profile: String,
    pub input_side: usize,
    pub num_classes: usize,
    pub layers: Vec<(String, LayerSpec)>,
}

/// Filter and neuron counts of a profile; pooling, LRN, ReLU and dropout
/// placement is shared by every profile.
struct Widths {
    conv: [(usize, usize); 4],
    fc: [usize; 2],
}

const PAPER: Widths = Widths {
    conv: [(96, 5), (256, 3), (384, 3), (512, 1)],
    fc: [4096, 1024],
};

const MINI: Widths = Widths {
    conv: [(8, 5), (16, 3), (32, 3), (32, 1)],
    fc: [64, 32],
};

pub const PROFILES: [&str; 2] = ["paper", "mini"];

impl ArchitectureSpec {
    pub fn paper(num_classes: usize) -> Result<Self> {
        Self::from_widths("paper", &PAPER, num_classes)
    }

    pub fn mini(num_classes: usize) -> Result<Self> {
        Self::from_widths("mini", &MINI, num_classes)
    }

    pub fn profile(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "paper" => Self::paper(num_classes),
            "mini" => Self::mini(num_classes),
            other => Err(Error::config(format!(
                "unknown profile '{other}' (expected one of {PROFILES:?})"
            ))),
        }
    }

    fn from_widths(profile: &str, w: &Widths, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let pool = LayerSpec::MaxPool(PoolGeometry::default());
        let lrn = LayerSpec::Lrn(LrnParams::default());
        let drop = LayerSpec::Dropout { ratio: 0.5 };
        let [(c1, k1), (c2, k2), (c3, k3), (c4, k4)] = w.conv;
        let layers = vec![
            ("conv1", LayerSpec::conv(c1, k1)),
            ("relu1", LayerSpec::Relu),
            ("norm1", lrn),
            ("pool1", pool),
            ("conv2", LayerSpec::conv(c2, k2)),
            ("relu2", LayerSpec::Relu),
            ("norm2", lrn),
            ("pool2", pool),
            ("conv3", LayerSpec::conv(c3, k3)),
            ("relu3", LayerSpec::Relu),
            ("pool3", pool),
            ("conv4", LayerSpec::conv(c4, k4)),
            ("relu4", LayerSpec::Relu),
            ("fc5", LayerSpec::Fc { out_neurons: w.fc[0] }),
            ("relu5", LayerSpec::Relu),
            ("drop5", drop),
            ("fc6", LayerSpec::Fc { out_neurons: w.fc[1] }),
            ("relu6", LayerSpec::Relu),
            ("drop6", drop),
            ("fc7", LayerSpec::Fc {
                out_neurons: num_classes,
            }),
        ];
        let spec = ArchitectureSpec {
            profile: profile.to_string(),
            input_side: INPUT_SIDE,
            num_classes,
            layers: layers.into_iter().map(|(n, s)| (n.to_string(), s)).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![1, self.input_side, self.input_side]
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        for (name, spec) in &self.layers {
            shape = spec
                .output_shape(&shape)
                .map_err(|e| Error::config(format!("layer {name}: {e}")))?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        match shapes.last() {
            Some(last) if last == &[self.num_classes] => Ok(()),
            other => Err(Error::config(format!(
                "final layer emits {other:?}, expected [{}]",
                self.num_classes
            ))),
        }
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|(n, _)| n == name)
    }

    pub fn param_count(&self) -> usize {
        let mut shape = self.input_shape();
        let mut total = 0;
        for (_, spec) in &self.layers {
            if let Some((w, b)) = spec.param_shapes(&shape) {
                total += w.iter().product::<usize>() + b.iter().product::<usize>();
            }
            shape = spec.output_shape(&shape).expect("validated");
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_shape_chain() {
        let arch = ArchitectureSpec::paper(13).unwrap();
        let shapes = arch.shapes().unwrap();
        let at = |n: &str| shapes[arch.layer_index(n).unwrap()].clone();
        assert_eq!(at("conv1"), [96, 28, 28]);
        assert_eq!(at("pool1"), [96, 15, 15]);
        assert_eq!(at("conv2"), [256, 13, 13]);
        assert_eq!(at("pool2"), [256, 7, 7]);
        assert_eq!(at("conv3"), [384, 5, 5]);
        assert_eq!(at("pool3"), [384, 3, 3]);
        assert_eq!(at("conv4"), [512, 3, 3]);
        assert_eq!(at("fc5"), [4096]);
        assert_eq!(at("fc6"), [1024]);
        assert_eq!(at("fc7"), [13]);
    }

    #[test]
    fn paper_param_count_near_24m() {
        let n = ArchitectureSpec::paper(13).unwrap().param_count() as f64;
        assert!((n / 24e6 - 1.0).abs() < 0.05, "{n}");
    }

    #[test]
    fn mini_chain() {
        let arch = ArchitectureSpec::mini(4).unwrap();
        let shapes = arch.shapes().unwrap();
        assert_eq!(shapes[arch.layer_index("conv4").unwrap()], [32, 3, 3]);
        assert_eq!(shapes[arch.layer_index("fc5").unwrap()], [64]);
        assert_eq!(shapes.last().unwrap(), &[4]);
    }

    #[test]
    fn rejects_unknown_profile_and_single_class() {
        assert!(ArchitectureSpec::profile("alexnet", 4).is_err());
        assert!(ArchitectureSpec::mini(1).is_err());
    }
}
