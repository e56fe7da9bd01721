//! Raw images, line-image preprocessing, bilinear resampling and PGM output.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const LINE_HEIGHT: usize = 40;

/// 8-bit image as decoded from disk, interleaved when `channels == 3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::input(format!("unsupported channel count {channels}")));
        }
        if width * height * channels != data.len() {
            return Err(Error::input(format!(
                "{width}×{height}×{channels} image needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            data,
        })
    }

    /// Luma in [0,1] using 0.299/0.587/0.114 weights for colour input.
    pub fn luma(&self) -> Vec<f32> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f32 / 255.0).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| {
                    ((0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
                        as f32
                })
                .collect(),
        }
    }
}

/// A preprocessed text line: 40 pixels high, at least 40 wide, grayscale in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct LineImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub label: usize,
    pub source_id: String,
    /// Mean pixel value, subtracted from every patch.
    pub mean: f64,
}

impl LineImage {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// Target width for a `width`×`height` input resized to the line height.
pub fn line_width(width: usize, height: usize) -> usize {
    let w = (width as f64 * LINE_HEIGHT as f64 / height as f64).round() as usize;
    w.max(LINE_HEIGHT)
}

pub fn preprocess(raw: &RawImage, label: usize, source_id: impl Into<String>) -> Result<LineImage> {
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::input("cannot preprocess an empty image"));
    }
    let gray = raw.luma();
    let width = line_width(raw.width, raw.height);
    let pixels = resize_bilinear(&gray, raw.width, raw.height, width, LINE_HEIGHT);
    let mean = pixels.iter().map(|&v| v as f64).sum::<f64>() / pixels.len() as f64;
    Ok(LineImage {
        width,
        height: LINE_HEIGHT,
        pixels,
        label,
        source_id: source_id.into(),
        mean,
    })
}

/// Bilinear resampling with pixel-centre alignment; same-size resizes are exact copies.
pub fn resize_bilinear(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), sw * sh);
    let axis = |d: usize, s_len: usize, d_len: usize| -> (usize, usize, f32) {
        let pos = ((d as f64 + 0.5) * s_len as f64 / d_len as f64 - 0.5).clamp(0.0, (s_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(s_len - 1);
        (i0, i1, (pos - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..dw).map(|x| axis(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, fy) = axis(y, sh, dh);
        let (r0, r1) = (&src[y0 * sw..(y0 + 1) * sw], &src[y1 * sw..(y1 + 1) * sw]);
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bot - top) * fy);
        }
    }
    out
}

pub fn load_image(path: &Path) -> Result<RawImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::input(format!("cannot decode {}: {other}", path.display())),
    })?;
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        RawImage::new(rgb.width() as usize, rgb.height() as usize, 3, rgb.into_raw())
    } else {
        let g = img.to_luma8();
        RawImage::gray(g.width() as usize, g.height() as usize, g.into_raw())
    }
}

/// Binary (P5) 8-bit PGM.
pub fn encode_pgm(img: &RawImage) -> Vec<u8> {
    assert_eq!(img.channels, 1, "PGM output is grayscale");
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_pgm(path: &Path, img: &RawImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_60x100_becomes_40x67() {
        let raw = RawImage::new(100, 60, 3, vec![128; 100 * 60 * 3]).unwrap();
        let line = preprocess(&raw, 0, "a").unwrap();
        assert_eq!((line.height, line.width), (40, 67));
    }

    #[test]
    fn already_40x40_is_unchanged() {
        let data: Vec<u8> = (0..1600).map(|i| (i * 7 % 256) as u8).collect();
        let raw = RawImage::gray(40, 40, data.clone()).unwrap();
        let line = preprocess(&raw, 0, "a").unwrap();
        assert_eq!((line.height, line.width), (40, 40));
        for (p, d) in line.pixels.iter().zip(&data) {
            assert_eq!(*p, *d as f32 / 255.0);
        }
    }

    #[test]
    fn narrow_image_is_stretched_to_40() {
        let raw = RawImage::gray(20, 80, vec![0; 1600]).unwrap();
        let line = preprocess(&raw, 0, "a").unwrap();
        assert_eq!((line.height, line.width), (40, 40));
    }

    #[test]
    fn luma_weights() {
        let raw = RawImage::new(1, 1, 3, vec![255, 0, 0]).unwrap();
        assert!((raw.luma()[0] - 0.299).abs() < 1e-6);
    }

    #[test]
    fn empty_image_rejected() {
        let raw = RawImage::gray(0, 0, vec![]).unwrap();
        assert!(matches!(preprocess(&raw, 0, "x"), Err(Error::Input(_))));
    }

    #[test]
    fn pgm_round_trip_through_decoder() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let raw = RawImage::gray(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        write_pgm(&p, &raw).unwrap();
        assert_eq!(load_image(&p).unwrap(), raw);
    }
}
