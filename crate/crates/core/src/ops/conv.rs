//! Valid (pad 0, stride 1) 2-D convolution lowered to im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn new<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = input.chw()?;
        let [f, wc, kh, kw] = weights.shape()[..] else {
            return Err(Error::config(format!(
                "conv weights must be F×C×kh×kw, got {:?}",
                weights.shape()
            )));
        };
        if wc != c {
            return Err(Error::config(format!(
                "conv input has {c} channels but weights expect {wc}"
            )));
        }
        if h < kh || w < kw {
            return Err(Error::input(format!(
                "conv input {h}×{w} smaller than kernel {kh}×{kw}"
            )));
        }
        Ok(ConvDims {
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh: h - kh + 1,
            ow: w - kw + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unrolls every receptive field into a (C·kh·kw) × (H'·W') matrix.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims) -> Vec<T> {
    let p = d.positions();
    let mut cols = vec![T::zero(); d.patch_len() * p];
    for c in 0..d.c {
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let src = (c * d.h + oy + i) * d.w + j;
                    dst[oy * d.ow..(oy + 1) * d.ow].copy_from_slice(&x[src..src + d.ow]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, out: &mut [T]) {
    let p = d.positions();
    for c in 0..d.c {
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let base = (c * d.h + oy + i) * d.w + j;
                    for (o, s) in out[base..base + d.ow]
                        .iter_mut()
                        .zip(&src[oy * d.ow..(oy + 1) * d.ow])
                    {
                        *o += *s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = ConvDims::new(input, weights)?;
    if bias.len() != d.f {
        return Err(Error::config(format!(
            "conv bias has {} entries for {} filters",
            bias.len(),
            d.f
        )));
    }
    let p = d.positions();
    let k = d.patch_len();
    let cols = im2col(input.data(), &d);
    let mut out = vec![T::zero(); d.f * p];
    for (row, b) in out.chunks_mut(p).zip(bias.data()) {
        row.iter_mut().for_each(|v| *v = *b);
    }
    T::gemm(
        d.f,
        k,
        p,
        T::one(),
        weights.data(),
        k as isize,
        1,
        &cols,
        p as isize,
        1,
        T::one(),
        &mut out,
        p as isize,
        1,
    );
    Tensor::new(&[d.f, d.oh, d.ow], out)
}

/// Accumulates weight and bias gradients.
pub fn conv2d_backward_params<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weights: &mut [T],
    grad_bias: &mut [T],
) -> Result<()> {
    let d = ConvDims::new(input, weights)?;
    check_grad_out(grad_out, &d)?;
    let p = d.positions();
    let k = d.patch_len();
    let cols = im2col(input.data(), &d);
    T::gemm(
        d.f,
        p,
        k,
        T::one(),
        grad_out.data(),
        p as isize,
        1,
        &cols,
        1,
        p as isize,
        T::one(),
        grad_weights,
        k as isize,
        1,
    );
    for (gb, row) in grad_bias.iter_mut().zip(grad_out.data().chunks(p)) {
        *gb += row.iter().copied().sum::<T>();
    }
    Ok(())
}

pub fn conv2d_backward_input<T: Scalar>(
    input_shape: &[usize],
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(input_shape);
    let d = ConvDims::new(&probe, weights)?;
    check_grad_out(grad_out, &d)?;
    let p = d.positions();
    let k = d.patch_len();
    let mut grad_cols = vec![T::zero(); k * p];
    T::gemm(
        k,
        d.f,
        p,
        T::one(),
        weights.data(),
        1,
        k as isize,
        grad_out.data(),
        p as isize,
        1,
        T::zero(),
        &mut grad_cols,
        p as isize,
        1,
    );
    let mut grad_in = probe.into_data();
    col2im(&grad_cols, &d, &mut grad_in);
    Tensor::new(input_shape, grad_in)
}

fn check_grad_out<T: Scalar>(grad_out: &Tensor<T>, d: &ConvDims) -> Result<()> {
    if grad_out.shape() != [d.f, d.oh, d.ow] {
        return Err(Error::input(format!(
            "conv upstream gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [d.f, d.oh, d.ow]
        )));
    }
    Ok(())
}
