//! Image-level fc5 descriptors and their binary dump.
//!
//! Dump layout: `"ECNFEATS" | version u16 | count u32 | dim u32`, then per
//! image `label u32` followed by a tensor record named by the source id.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::net::PatchNet;
use crate::sampler::PatchSet;
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 8] = b"ECNFEATS";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Fc5Feature {
    pub source_id: String,
    pub label: usize,
    /// Mean of the per-patch fc5 activations (after the ReLU).
    pub values: Vec<f64>,
}

pub fn fc5_feature<T: Scalar>(net: &PatchNet<T>, set: &PatchSet<T>) -> Result<Fc5Feature> {
    if set.is_empty() {
        return Err(Error::input(format!("image {} has no patches", set.source_id)));
    }
    let mut acc: Vec<f64> = Vec::new();
    for p in &set.patches {
        let trace = net.forward(p, crate::ops::Mode::Test)?;
        let f = trace.fc5().data();
        if acc.is_empty() {
            acc = vec![0.0; f.len()];
        }
        acc.iter_mut().zip(f).for_each(|(a, v)| *a += v.widen());
    }
    let n = set.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Fc5Feature {
        source_id: set.source_id.clone(),
        label: set.label,
        values: acc,
    })
}

pub fn extract_fc5<T: Scalar>(net: &PatchNet<T>, sets: &[PatchSet<T>]) -> Result<Vec<Fc5Feature>> {
    if sets.is_empty() {
        return Err(Error::input("no images to extract features from"));
    }
    sets.par_iter().map(|s| fc5_feature(net, s)).collect()
}

pub fn encode_features(features: &[Fc5Feature]) -> Result<Vec<u8>> {
    let dim = features.first().map_or(0, |f| f.values.len());
    if features.iter().any(|f| f.values.len() != dim) {
        return Err(Error::input("features differ in length"));
    }
    let mut e = Encoder::default();
    e.bytes(MAGIC);
    e.u16(VERSION);
    e.u32(features.len() as u32);
    e.u32(dim as u32);
    for f in features {
        e.u32(f.label as u32);
        e.tensor(&f.source_id, &[dim.max(1)], &f.values);
    }
    Ok(e.buf)
}

pub fn decode_features(bytes: &[u8], context: &str) -> Result<Vec<Fc5Feature>> {
    let mut d = Decoder::new(bytes, context);
    if d.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(d.err("not a feature dump (bad magic)"));
    }
    let version = d.u16("version")?;
    if version != VERSION {
        return Err(d.err(format!("unsupported version {version}")));
    }
    let count = d.u32("count")? as usize;
    let dim = d.u32("dim")? as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let label = d.u32(&format!("record {i}"))? as usize;
        let t = d.tensor(&format!("record {i}"))?;
        if t.shape != [dim] {
            return Err(d.err(format!("record {} has shape {:?}, expected [{dim}]", t.name, t.shape)));
        }
        out.push(Fc5Feature {
            source_id: t.name,
            label,
            values: t.values,
        });
    }
    if !d.at_end() {
        return Err(d.err("trailing bytes after last record"));
    }
    Ok(out)
}

pub fn write_features(path: &Path, features: &[Fc5Feature]) -> Result<()> {
    fs::write(path, encode_features(features)?).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<Fc5Feature>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn set(patches: Vec<Tensor<f64>>) -> PatchSet<f64> {
        PatchSet {
            patches,
            origins: vec![],
            label: 1,
            source_id: "img".into(),
            width: 40,
        }
    }

    fn patch(k: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, 32, 32], |i| (((i + k) * 37 % 23) as f64 - 11.0) / 12.0)
    }

    #[test]
    fn duplicated_patch_equals_single() {
        let net = PatchNet::<f64>::build("mini", 3, 2).unwrap();
        let one = fc5_feature(&net, &set(vec![patch(0)])).unwrap();
        let dup = fc5_feature(&net, &set(vec![patch(0); 4])).unwrap();
        assert_eq!(one.values.len(), 64);
        for (a, b) in one.values.iter().zip(&dup.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_patch_midpoint() {
        let net = PatchNet::<f64>::build("mini", 3, 2).unwrap();
        let a = net.forward(&patch(0), crate::ops::Mode::Test).unwrap().fc5().data().to_vec();
        let b = net.forward(&patch(5), crate::ops::Mode::Test).unwrap().fc5().data().to_vec();
        let f = fc5_feature(&net, &set(vec![patch(0), patch(5)])).unwrap();
        for i in 0..a.len() {
            assert!((f.values[i] - (a[i] + b[i]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dump_round_trip_and_truncation() {
        let feats = vec![
            Fc5Feature { source_id: "a".into(), label: 0, values: vec![0.5, 1.0, -2.0] },
            Fc5Feature { source_id: "b".into(), label: 2, values: vec![0.0, 0.1, 3.0] },
        ];
        let bytes = encode_features(&feats).unwrap();
        assert_eq!(decode_features(&bytes, "x").unwrap(), feats);
        assert!(decode_features(&bytes[..bytes.len() - 3], "x").is_err());
        assert!(decode_features(b"NOTFEATS", "x").is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let net = PatchNet::<f64>::build("mini", 3, 2).unwrap();
        assert!(matches!(extract_fc5(&net, &[]), Err(Error::Input(_))));
    }
}
