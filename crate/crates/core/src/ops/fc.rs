//! Fully connected layer: `out = W·x + b` on the flattened input.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn dims<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize)> {
    let [m, n] = weights.shape()[..] else {
        return Err(Error::config(format!(
            "fc weights must be m×n, got {:?}",
            weights.shape()
        )));
    };
    if input.len() != n {
        return Err(Error::config(format!(
            "fc layer expects {n} inputs, got {}",
            input.len()
        )));
    }
    Ok((m, n))
}

pub fn fc_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, n) = dims(input, weights)?;
    if bias.len() != m {
        return Err(Error::config(format!(
            "fc bias has {} entries for {m} outputs",
            bias.len()
        )));
    }
    let mut out = bias.data().to_vec();
    T::gemm(
        m,
        n,
        1,
        T::one(),
        weights.data(),
        n as isize,
        1,
        input.data(),
        1,
        1,
        T::one(),
        &mut out,
        1,
        1,
    );
    Ok(Tensor::vector(out))
}

pub fn fc_backward_params<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weights: &mut [T],
    grad_bias: &mut [T],
) -> Result<()> {
    let (m, n) = (grad_out.len(), input.len());
    if grad_weights.len() != m * n || grad_bias.len() != m {
        return Err(Error::input("fc gradient buffers have the wrong size"));
    }
    let x = input.data();
    for ((row, gb), g) in grad_weights
        .chunks_mut(n)
        .zip(grad_bias.iter_mut())
        .zip(grad_out.data())
    {
        *gb += *g;
        if *g == T::zero() {
            continue;
        }
        for (w, xv) in row.iter_mut().zip(x) {
            *w += *g * *xv;
        }
    }
    Ok(())
}

pub fn fc_backward_input<T: Scalar>(
    input_shape: &[usize],
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [m, n] = weights.shape()[..] else {
        return Err(Error::config("fc weights must be m×n"));
    };
    if grad_out.len() != m {
        return Err(Error::input("fc upstream gradient length mismatch"));
    }
    let mut gi = vec![T::zero(); n];
    T::gemm(
        1,
        m,
        n,
        T::one(),
        grad_out.data(),
        m as isize,
        1,
        weights.data(),
        n as isize,
        1,
        T::zero(),
        &mut gi,
        n as isize,
        1,
    );
    Tensor::new(input_shape, gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::<f64>::vector(vec![0.5, -2.0, 3.0]);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[3]);
        assert_eq!(fc_forward(&x, &w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn hand_product() {
        let x = Tensor::<f64>::vector(vec![1.0, 1.0]);
        let w = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::vector(vec![1.0, -1.0]);
        assert_eq!(fc_forward(&x, &w, &b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn flattens_feature_maps() {
        let x = Tensor::<f32>::zeros(&[512, 3, 3]);
        let w = Tensor::<f32>::zeros(&[16, 4608]);
        let b = Tensor::<f32>::zeros(&[16]);
        assert_eq!(fc_forward(&x, &w, &b).unwrap().shape(), &[16]);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor::<f64>::zeros(&[3]);
        let w = Tensor::<f64>::zeros(&[2, 2]);
        let b = Tensor::<f64>::zeros(&[2]);
        assert!(matches!(fc_forward(&x, &w, &b), Err(Error::Config(_))));
    }
}
