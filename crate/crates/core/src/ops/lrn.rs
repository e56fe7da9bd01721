//! Across-channel local response normalization.
//!
//! `out[c] = in[c] / (k + (alpha/window) · Σ_{c' ∈ window(c)} in[c']²)^beta`,
//! where `window(c)` is the `window` channels centred on `c`, clipped at the edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub window: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            window: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 1.0,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::config(format!(
                "LRN window must be odd, got {}",
                self.window
            )));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.k > 0.0) {
            return Err(Error::config(format!(
                "LRN alpha, beta and k must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    fn channel_range(&self, c: usize, channels: usize) -> std::ops::Range<usize> {
        let half = self.window / 2;
        c.saturating_sub(half)..(c + half + 1).min(channels)
    }
}

/// Returns the normalized map and the per-element denominator base `s`
/// (before raising to `beta`), which backward needs.
pub fn lrn_forward<T: Scalar>(input: &Tensor<T>, p: LrnParams) -> Result<(Tensor<T>, Vec<T>)> {
    p.validate()?;
    let (c, h, w) = input.chw()?;
    let plane = h * w;
    let x = input.data();
    let coef = T::lit(p.alpha / p.window as f64);
    let k = T::lit(p.k);
    let beta = T::lit(p.beta);
    let mut scale = vec![T::zero(); x.len()];
    for ch in 0..c {
        let dst = &mut scale[ch * plane..(ch + 1) * plane];
        for src in p.channel_range(ch, c) {
            for (s, v) in dst.iter_mut().zip(&x[src * plane..(src + 1) * plane]) {
                *s += *v * *v;
            }
        }
        dst.iter_mut().for_each(|s| *s = k + coef * *s);
    }
    let out = x
        .iter()
        .zip(&scale)
        .map(|(v, s)| *v * s.powf(-beta))
        .collect();
    Ok((Tensor::new(input.shape(), out)?, scale))
}

pub fn lrn_backward<T: Scalar>(
    input: &Tensor<T>,
    output: &Tensor<T>,
    scale: &[T],
    grad_out: &Tensor<T>,
    p: LrnParams,
) -> Result<Tensor<T>> {
    p.validate()?;
    let (c, h, w) = input.chw()?;
    if grad_out.shape() != input.shape() || scale.len() != input.len() {
        return Err(Error::input("LRN backward buffers disagree with input shape"));
    }
    let plane = h * w;
    let (x, y, g) = (input.data(), output.data(), grad_out.data());
    let beta = T::lit(p.beta);
    let factor = T::lit(2.0 * p.alpha * p.beta / p.window as f64);
    // t[c] = g[c]·y[c]/s[c]
    let t: Vec<T> = g
        .iter()
        .zip(y)
        .zip(scale)
        .map(|((g, y), s)| *g * *y / *s)
        .collect();
    let mut grad_in = vec![T::zero(); x.len()];
    for ch in 0..c {
        let dst = &mut grad_in[ch * plane..(ch + 1) * plane];
        for src in p.channel_range(ch, c) {
            for (d, tv) in dst.iter_mut().zip(&t[src * plane..(src + 1) * plane]) {
                *d += *tv;
            }
        }
        let base = ch * plane;
        for (i, d) in dst.iter_mut().enumerate() {
            let j = base + i;
            *d = g[j] * scale[j].powf(-beta) - factor * x[j] * *d;
        }
    }
    Tensor::new(input.shape(), grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_input_stays_zero() {
        let x = Tensor::<f64>::zeros(&[4, 3, 3]);
        let (y, _) = lrn_forward(&x, LrnParams::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_hand_value() {
        let p = LrnParams {
            window: 1,
            alpha: 1.0,
            beta: 0.5,
            k: 1.0,
        };
        let x = Tensor::<f64>::full(&[1, 1, 1], 3.0);
        let (y, _) = lrn_forward(&x, p).unwrap();
        assert!((y.data()[0] - 3.0 / 10f64.sqrt()).abs() < 1e-12);
        assert!((y.data()[0] - 0.9487).abs() < 1e-4);
    }

    #[test]
    fn matches_per_element_reference() {
        let p = LrnParams::default();
        let mut rng = crate::seed::rng(11);
        let x = Tensor::<f64>::from_fn(&[6, 4, 4], |_| rng.random_range(-1.0..1.0));
        let (y, _) = lrn_forward(&x, p).unwrap();
        for c in 0..6usize {
            for i in 0..16 {
                let lo = c.saturating_sub(2);
                let hi = (c + 2).min(5);
                let sum: f64 = (lo..=hi).map(|cc| x.data()[cc * 16 + i].powi(2)).sum();
                let expect =
                    x.data()[c * 16 + i] / (p.k + p.alpha / p.window as f64 * sum).powf(p.beta);
                assert!((y.data()[c * 16 + i] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn preserves_sign() {
        let x = Tensor::<f64>::new(&[3, 1, 1], vec![-2.0, 0.5, -0.1]).unwrap();
        let (y, _) = lrn_forward(&x, LrnParams::default()).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(a.signum(), b.signum());
        }
    }

    #[test]
    fn rejects_bad_params() {
        let x = Tensor::<f64>::zeros(&[1, 1, 1]);
        for p in [
            LrnParams { alpha: 0.0, ..Default::default() },
            LrnParams { beta: -1.0, ..Default::default() },
            LrnParams { k: 0.0, ..Default::default() },
            LrnParams { window: 4, ..Default::default() },
        ] {
            assert!(matches!(lrn_forward(&x, p), Err(Error::Config(_))));
        }
    }
}
