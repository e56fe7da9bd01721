//! ReLU and inverted dropout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|v| v.max(T::zero())).collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

/// Routes upstream gradient where the forward output was positive.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::input("relu backward shape mismatch"));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(y, g)| if *y > T::zero() { *g } else { T::zero() })
        .collect();
    Tensor::new(output.shape(), data)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!(
            "dropout ratio must lie in (0,1), got {ratio}"
        )));
    }
    Ok(())
}

/// Draws a keep mask: each element is kept with probability `1 - ratio`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, ratio: f64, rng: &mut R) -> Result<Vec<bool>> {
    check_ratio(ratio)?;
    Ok((0..len).map(|_| rng.random::<f64>() >= ratio).collect())
}

/// Applies a keep mask with inverted scaling; returns the output and the
/// per-element multiplier (0 or 1/(1−ratio)) used by backward.
pub fn dropout_apply<T: Scalar>(
    input: &Tensor<T>,
    ratio: f64,
    keep: &[bool],
) -> Result<(Tensor<T>, Vec<T>)> {
    check_ratio(ratio)?;
    if keep.len() != input.len() {
        return Err(Error::input("dropout mask length mismatch"));
    }
    let scale = T::lit(1.0 / (1.0 - ratio));
    let mult: Vec<T> = keep
        .iter()
        .map(|&k| if k { scale } else { T::zero() })
        .collect();
    let data = input.data().iter().zip(&mult).map(|(x, m)| *x * *m).collect();
    Ok((Tensor::new(input.shape(), data)?, mult))
}

/// Train mode (an RNG is supplied) draws and applies a fresh mask; test mode is the identity.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    ratio: f64,
    rng: Option<&mut R>,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    check_ratio(ratio)?;
    match rng {
        None => Ok((input.clone(), None)),
        Some(rng) => {
            let keep = dropout_mask(input.len(), ratio, rng)?;
            let (out, mult) = dropout_apply(input, ratio, &keep)?;
            Ok((out, Some(mult)))
        }
    }
}

pub fn dropout_backward<T: Scalar>(mult: Option<&[T]>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    match mult {
        None => Ok(grad_out.clone()),
        Some(m) => {
            if m.len() != grad_out.len() {
                return Err(Error::input("dropout backward mask length mismatch"));
            }
            let data = grad_out.data().iter().zip(m).map(|(g, m)| *g * *m).collect();
            Tensor::new(grad_out.shape(), data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_definition() {
        let x = Tensor::<f64>::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_subgradient() {
        let y = relu_forward(&Tensor::<f64>::vector(vec![-1.0, 2.0]));
        let g = relu_backward(&y, &Tensor::vector(vec![3.0, 3.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 3.0]);
    }

    #[test]
    fn dropout_test_mode_is_identity() {
        let x = Tensor::<f32>::vector(vec![1.0, -2.0, 3.5]);
        let (y, mask) = dropout_forward::<f32, ChaCha8Rng>(&x, 0.5, None).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn inverted_scaling_with_fixed_mask() {
        let x = Tensor::<f64>::vector(vec![2.0; 4]);
        let (y, _) = dropout_apply(&x, 0.5, &[true, false, true, false]).unwrap();
        assert_eq!(y.data(), &[4.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn seeded_masks_repeat() {
        let a = dropout_mask(64, 0.5, &mut crate::seed::rng(9)).unwrap();
        let b = dropout_mask(64, 0.5, &mut crate::seed::rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(dropout_mask(4, 1.0, &mut crate::seed::rng(9)).is_err());
    }
}
