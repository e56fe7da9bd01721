//! Little-endian record encoding shared by checkpoints and feature dumps.

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar};

#[derive(Default)]
pub(crate) struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }

    /// `{name, dtype tag, ndim, dims…, values}`.
    pub fn tensor<T: Scalar>(&mut self, name: &str, shape: &[usize], values: &[T]) {
        self.str(name);
        self.u8(T::DTYPE.tag());
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u32(d as u32);
        }
        self.buf.reserve(values.len() * T::DTYPE.size());
        for v in values {
            v.write_le(&mut self.buf);
        }
    }
}

pub(crate) struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
    context: String,
}

pub(crate) struct RawTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8], context: impl Into<String>) -> Self {
        Decoder {
            data,
            pos: 0,
            context: context.into(),
        }
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.context.clone(), msg)
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.data.len()
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated while reading {what} (need {n} bytes at offset {}, {} left)",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u16(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err(format!("{what} is not UTF-8")))
    }

    /// Reads one tensor record; values are widened to `f64` (exact for f32).
    pub fn tensor(&mut self, what: &str) -> Result<RawTensor> {
        let name = self.str(what)?;
        let ctx = format!("layer {name}");
        let tag = self.u8(&ctx)?;
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| self.err(format!("layer {name}: unknown dtype tag {tag}")))?;
        let ndim = self.u8(&ctx)? as usize;
        if ndim == 0 || ndim > 4 {
            return Err(self.err(format!("layer {name}: invalid rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32(&ctx)? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = self.take(count * dtype.size(), &ctx)?;
        let values = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(RawTensor {
            name,
            shape,
            values,
        })
    }
}
