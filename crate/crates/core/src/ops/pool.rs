//! Max pooling with ceil-mode output extents and −∞ padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Default for PoolGeometry {
    fn default() -> Self {
        PoolGeometry {
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }
}

impl PoolGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.pad >= self.kernel {
            return Err(Error::config(format!("invalid pooling geometry {self:?}")));
        }
        Ok(())
    }

    /// Ceil-mode extent; the last window is dropped if it would start in the
    /// trailing padding, so every window covers at least one real cell.
    pub fn output_extent(&self, input: usize) -> usize {
        let span = (input + 2 * self.pad).saturating_sub(self.kernel);
        let mut out = span.div_ceil(self.stride) + 1;
        if (out - 1) * self.stride >= input + self.pad {
            out -= 1;
        }
        out
    }
}

/// Returns the pooled map and, per output cell, the flat input index that won.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    geom: PoolGeometry,
) -> Result<(Tensor<T>, Vec<usize>)> {
    geom.validate()?;
    let (c, h, w) = input.chw()?;
    let (oh, ow) = (geom.output_extent(h), geom.output_extent(w));
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = ch * h * w;
        for oy in 0..oh {
            let y0 = (oy * geom.stride).saturating_sub(geom.pad);
            let y1 = (oy * geom.stride + geom.kernel - geom.pad).min(h);
            for ox in 0..ow {
                let x0 = (ox * geom.stride).saturating_sub(geom.pad);
                let x1 = (ox * geom.stride + geom.kernel - geom.pad).min(w);
                let mut best = T::neg_infinity();
                let mut best_idx = plane + y0 * w + x0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        let idx = plane + yy * w + xx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(&[c, oh, ow], out)?, argmax))
}

pub fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::input(format!(
            "pool backward: {} routing indices for {} gradients",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_extents() {
        let g = PoolGeometry::default();
        assert_eq!(g.output_extent(28), 15);
        assert_eq!(g.output_extent(13), 7);
        assert_eq!(g.output_extent(5), 3);
        let x = Tensor::<f32>::zeros(&[96, 28, 28]);
        assert_eq!(maxpool_forward(&x, g).unwrap().0.shape(), &[96, 15, 15]);
        let x = Tensor::<f32>::zeros(&[256, 13, 13]);
        assert_eq!(maxpool_forward(&x, g).unwrap().0.shape(), &[256, 7, 7]);
    }

    #[test]
    fn constant_input_gives_constant_output() {
        // Negative values would lose to zero padding; −∞ padding keeps them.
        let x = Tensor::<f64>::full(&[2, 6, 5], -0.75);
        let (y, _) = maxpool_forward(&x, PoolGeometry::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == -0.75));
    }

    #[test]
    fn routes_gradient_to_winner() {
        let x = Tensor::<f64>::new(&[1, 2, 2], vec![1.0, 5.0, 2.0, 3.0]).unwrap();
        let g = PoolGeometry { kernel: 2, stride: 2, pad: 0 };
        let (y, idx) = maxpool_forward(&x, g).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let up = Tensor::<f64>::full(&[1, 1, 1], 2.0);
        let gi = maxpool_backward(x.shape(), &idx, &up).unwrap();
        assert_eq!(gi.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
