//! Dense two-scale patch sampling.
//!
//! Full-height 40×40 windows and 32×32 windows are slid with a step of 8
//! pixels in both axes. 40×40 windows are bilinearly downscaled to the
//! network's 32×32 input. Every patch has the image mean subtracted.

use serde::{Deserialize, Serialize};

use super::image::{resize_bilinear, LineImage, LINE_HEIGHT};
use crate::error::{Error, Result};
use crate::net::INPUT_SIDE;
use crate::tensor::{Scalar, Tensor};

pub const LARGE_WINDOW: usize = LINE_HEIGHT;
pub const SMALL_WINDOW: usize = 32;
pub const STEP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    /// Side of the source window in line-image pixels (40 or 32).
    pub scale: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Debug)]
pub struct PatchSet<T> {
    pub patches: Vec<Tensor<T>>,
    pub origins: Vec<PatchOrigin>,
    pub label: usize,
    pub source_id: String,
    pub width: usize,
}

impl<T> PatchSet<T> {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

fn positions(extent: usize, window: usize) -> Vec<usize> {
    if extent < window {
        return Vec::new();
    }
    (0..=extent - window).step_by(STEP).collect()
}

/// Number of 40×40 windows in a line of width `w`.
pub fn large_count(w: usize) -> usize {
    if w < LARGE_WINDOW {
        0
    } else {
        (w - LARGE_WINDOW) / STEP + 1
    }
}

/// Number of 32×32 windows in a 40-high line of width `w`.
pub fn small_count(w: usize) -> usize {
    if w < SMALL_WINDOW {
        0
    } else {
        2 * ((w - SMALL_WINDOW) / STEP + 1)
    }
}

/// Window origins in emission order: 40×40 left to right, then 32×32 row by row.
pub fn window_origins(width: usize) -> Vec<PatchOrigin> {
    let mut out: Vec<PatchOrigin> = positions(width, LARGE_WINDOW)
        .into_iter()
        .map(|x| PatchOrigin {
            scale: LARGE_WINDOW,
            x,
            y: 0,
        })
        .collect();
    for y in positions(LINE_HEIGHT, SMALL_WINDOW) {
        out.extend(positions(width, SMALL_WINDOW).into_iter().map(|x| PatchOrigin {
            scale: SMALL_WINDOW,
            x,
            y,
        }));
    }
    out
}

fn crop(line: &LineImage, o: PatchOrigin) -> Vec<f32> {
    let mut out = Vec::with_capacity(o.scale * o.scale);
    for y in o.y..o.y + o.scale {
        let row = y * line.width;
        out.extend_from_slice(&line.pixels[row + o.x..row + o.x + o.scale]);
    }
    out
}

pub fn extract_patches<T: Scalar>(line: &LineImage) -> Result<PatchSet<T>> {
    if line.height != LINE_HEIGHT || line.width < LARGE_WINDOW {
        return Err(Error::input(format!(
            "line image {} is {}×{}; expected height {LINE_HEIGHT} and width ≥ {LARGE_WINDOW}",
            line.source_id, line.height, line.width
        )));
    }
    let origins = window_origins(line.width);
    let mean = line.mean;
    let patches = origins
        .iter()
        .map(|&o| {
            let mut px = crop(line, o);
            if o.scale != INPUT_SIDE {
                px = resize_bilinear(&px, o.scale, o.scale, INPUT_SIDE, INPUT_SIDE);
            }
            let data = px.into_iter().map(|v| T::lit(v as f64 - mean)).collect();
            Tensor::new(&[1, INPUT_SIDE, INPUT_SIDE], data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet {
        patches,
        origins,
        label: line.label,
        source_id: line.source_id.clone(),
        width: line.width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(width: usize, f: impl Fn(usize, usize) -> f32) -> LineImage {
        let pixels: Vec<f32> = (0..LINE_HEIGHT * width).map(|i| f(i % width, i / width)).collect();
        let mean = pixels.iter().map(|&v| v as f64).sum::<f64>() / pixels.len() as f64;
        LineImage {
            width,
            height: LINE_HEIGHT,
            pixels,
            label: 1,
            source_id: "t".into(),
            mean,
        }
    }

    #[test]
    fn width_184_gives_59() {
        assert_eq!(large_count(184), 19);
        assert_eq!(small_count(184), 40);
        let set = extract_patches::<f32>(&line(184, |x, _| x as f32 / 184.0)).unwrap();
        assert_eq!(set.len(), 59);
        assert!(set.patches.iter().all(|p| p.shape() == [1, 32, 32]));
    }

    #[test]
    fn width_40_minimal_case() {
        let origins = window_origins(40);
        assert_eq!(large_count(40) + small_count(40), origins.len());
        assert_eq!(origins.len(), 5);
        assert_eq!(origins.iter().filter(|o| o.scale == 40).count(), 1);
    }

    #[test]
    fn constant_image_patches_are_zero() {
        let set = extract_patches::<f64>(&line(75, |_, _| 0.6)).unwrap();
        for p in &set.patches {
            assert!(p.data().iter().all(|v| v.abs() < 1e-7));
        }
    }

    #[test]
    fn small_patch_is_exact_crop_minus_mean() {
        let l = line(48, |x, y| ((x * 3 + y * 5) % 17) as f32 / 17.0);
        let set = extract_patches::<f64>(&l).unwrap();
        let (i, o) = set
            .origins
            .iter()
            .enumerate()
            .find(|(_, o)| o.scale == 32 && o.x == 8 && o.y == 8)
            .unwrap();
        assert_eq!(*o, PatchOrigin { scale: 32, x: 8, y: 8 });
        let p = &set.patches[i];
        for yy in 0..32 {
            for xx in 0..32 {
                let expect = l.at(8 + xx, 8 + yy) as f64 - l.mean;
                assert!((p.data()[yy * 32 + xx] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn narrow_line_rejected() {
        let mut l = line(40, |_, _| 0.0);
        l.width = 39;
        assert!(extract_patches::<f32>(&l).is_err());
    }
}
