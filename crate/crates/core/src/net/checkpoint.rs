//! Checkpoint files.
//!
//! Layout (all integers little-endian, strings as u16 length + UTF-8):
//!
//! ```text
//! "ECNPATCH" | version u16 | profile str | K u32 | iteration u64 | record count u32
//! record*: name str | dtype u8 (0 = f32, 1 = f64) | ndim u8 | dims u32* | raw values
//! ```
//!
//! Parameter records are named `<layer>.weight` / `<layer>.bias`. Optional
//! records carry optimizer velocity (`velocity/<layer>.weight`, …) and
//! bookkeeping (`meta/phase`, `meta/val_accuracy`), each a length-1 f64 vector.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{ArchitectureSpec, ParamBuffers, PatchNet, Phase, Velocity};
use crate::binio::{Decoder, Encoder, RawTensor};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 8] = b"ECNPATCH";
pub const VERSION: u16 = 1;

const META_PHASE: &str = "meta/phase";
const META_VAL_ACC: &str = "meta/val_accuracy";
const VELOCITY_PREFIX: &str = "velocity/";

/// A network together with the optimizer state needed to resume training.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub net: PatchNet<T>,
    pub velocity: Option<Velocity<T>>,
}

pub fn encode<T: Scalar>(net: &PatchNet<T>, velocity: Option<&Velocity<T>>) -> Vec<u8> {
    let mut records: Vec<(String, Vec<usize>, Vec<T>)> = Vec::new();
    for (name, w, b) in net.params() {
        records.push((format!("{name}.weight"), w.shape().to_vec(), w.data().to_vec()));
        records.push((format!("{name}.bias"), b.shape().to_vec(), b.data().to_vec()));
    }
    if let Some(v) = velocity {
        for ((name, w, b), (_, vw, vb)) in net.params().zip(v.iter()) {
            records.push((format!("{VELOCITY_PREFIX}{name}.weight"), w.shape().to_vec(), vw.to_vec()));
            records.push((format!("{VELOCITY_PREFIX}{name}.bias"), b.shape().to_vec(), vb.to_vec()));
        }
    }
    let mut meta: Vec<(&str, f64)> = vec![(
        META_PHASE,
        match net.phase {
            Phase::Simple => 0.0,
            Phase::Ecn => 1.0,
        },
    )];
    if let Some(acc) = net.val_accuracy {
        meta.push((META_VAL_ACC, acc));
    }

    let mut enc = Encoder::default();
    enc.bytes(MAGIC);
    enc.u16(VERSION);
    enc.str(net.profile());
    enc.u32(net.num_classes() as u32);
    enc.u64(net.iteration);
    enc.u32((records.len() + meta.len()) as u32);
    for (name, shape, values) in &records {
        enc.tensor(name, shape, values);
    }
    for (name, value) in meta {
        enc.tensor::<f64>(name, &[1], &[value]);
    }
    enc.buf
}

pub fn decode<T: Scalar>(bytes: &[u8], context: &str) -> Result<Checkpoint<T>> {
    let mut dec = Decoder::new(bytes, context);
    let magic = dec.take(8, "magic")?;
    if magic != MAGIC {
        return Err(dec.err("bad magic; not an ECNPATCH checkpoint"));
    }
    let version = dec.u16("version")?;
    if version != VERSION {
        return Err(dec.err(format!("unsupported version {version} (expected {VERSION})")));
    }
    let profile = dec.str("profile name")?;
    let k = dec.u32("class count")? as usize;
    let iteration = dec.u64("iteration counter")?;
    let count = dec.u32("record count")? as usize;

    let arch = ArchitectureSpec::profile(&profile, k)
        .map_err(|e| dec.err(format!("header declares an invalid architecture: {e}")))?;
    let mut net = PatchNet::<T>::zeroed(arch)?;
    net.iteration = iteration;

    let mut records: HashMap<String, RawTensor> = HashMap::with_capacity(count);
    for i in 0..count {
        let rec = dec.tensor(&format!("record {i}"))?;
        if records.contains_key(&rec.name) {
            return Err(dec.err(format!("duplicate record {}", rec.name)));
        }
        records.insert(rec.name.clone(), rec);
    }
    if !dec.at_end() {
        return Err(dec.err("trailing bytes after the last record"));
    }

    let mut take = |name: &str, shape: &[usize]| -> Result<Option<Vec<T>>> {
        match records.remove(name) {
            None => Ok(None),
            Some(rec) if rec.shape != shape => Err(Error::format(
                context,
                format!(
                    "layer {name}: shape {:?} disagrees with profile '{profile}' ({shape:?})",
                    rec.shape
                ),
            )),
            Some(rec) => Ok(Some(rec.values.into_iter().map(T::lit).collect())),
        }
    };

    let mut velocity = ParamBuffers::zeros_like(&net);
    let mut velocity_seen = 0usize;
    let mut velocity_expected = 0usize;
    for ((name, w, b), (_, vw, vb)) in net.params_mut().zip(velocity.iter_mut()) {
        for (suffix, tensor, vslot) in [(".weight", w, vw), (".bias", b, vb)] {
            let key = format!("{name}{suffix}");
            let shape = tensor.shape().to_vec();
            let values = take(&key, &shape)?
                .ok_or_else(|| Error::format(context, format!("layer {key}: record missing")))?;
            tensor.data_mut().copy_from_slice(&values);
            velocity_expected += 1;
            if let Some(v) = take(&format!("{VELOCITY_PREFIX}{key}"), &shape)? {
                *vslot = v;
                velocity_seen += 1;
            }
        }
    }
    if let Some(v) = take(META_PHASE, &[1])? {
        net.phase = if v[0].widen() == 0.0 { Phase::Simple } else { Phase::Ecn };
    }
    if let Some(v) = records.remove(META_VAL_ACC) {
        net.val_accuracy = v.values.first().copied();
    }
    if let Some(name) = records.keys().min() {
        return Err(Error::format(
            context,
            format!("unexpected record {name} for profile '{profile}'"),
        ));
    }
    let velocity = match velocity_seen {
        0 => None,
        n if n == velocity_expected => Some(velocity),
        _ => return Err(Error::format(context, "velocity records are incomplete")),
    };
    Ok(Checkpoint { net, velocity })
}

pub fn save_checkpoint<T: Scalar>(
    net: &PatchNet<T>,
    velocity: Option<&Velocity<T>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net, velocity)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn save<T: Scalar>(net: &PatchNet<T>, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint(net, None, path)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<PatchNet<T>> {
    Ok(load_checkpoint(path)?.net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained_like() -> (PatchNet<f32>, Velocity<f32>) {
        let mut net = PatchNet::<f32>::build("mini", 4, 11).unwrap();
        net.iteration = 1234;
        net.phase = Phase::Ecn;
        net.val_accuracy = Some(0.8125);
        let mut v = Velocity::zeros_like(&net);
        for (i, w, b) in v.iter_mut() {
            w.iter_mut().enumerate().for_each(|(j, x)| *x = (i * 7 + j) as f32 * 1e-3);
            b.iter_mut().for_each(|x| *x = -0.5);
        }
        (net, v)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (net, v) = trained_like();
        let back = decode::<f32>(&encode(&net, Some(&v)), "mem").unwrap();
        assert!(back.net.bit_eq(&net));
        assert_eq!(back.velocity.unwrap(), v);
        let plain = decode::<f32>(&encode(&net, None), "mem").unwrap();
        assert!(plain.velocity.is_none());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let (net, v) = trained_like();
        save_checkpoint(&net, Some(&v), &p).unwrap();
        let back = load_checkpoint::<f32>(&p).unwrap();
        assert!(back.net.bit_eq(&net));
        assert!(matches!(load::<f32>(dir.path().join("missing.ckpt")), Err(Error::Missing(_))));
    }

    #[test]
    fn widening_is_exact() {
        let (net, _) = trained_like();
        let wide = decode::<f64>(&encode(&net, None), "mem").unwrap().net;
        assert!(wide.bit_eq(&net.cast::<f64>()));
        for ((_, a, _), (_, b, _)) in net.params().zip(wide.params()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x as f64 == *y));
        }
    }

    #[test]
    fn truncation_names_layer() {
        let (net, _) = trained_like();
        let bytes = encode(&net, None);
        let err = decode::<f32>(&bytes[..bytes.len() / 2], "cut").unwrap_err().to_string();
        assert!(err.contains("layer "), "{err}");
        assert!(err.contains("cut"), "{err}");
    }

    #[test]
    fn corrupt_headers_and_tails() {
        let (net, _) = trained_like();
        let bytes = encode(&net, None);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad, "m").unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode::<f32>(&bad, "m").unwrap_err().to_string().contains("version"));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(decode::<f32>(&bad, "m").unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn profile_shape_disagreement() {
        let mut enc = Encoder::default();
        enc.bytes(MAGIC);
        enc.u16(VERSION);
        enc.str("mini");
        enc.u32(4);
        enc.u64(0);
        enc.u32(1);
        enc.tensor::<f32>("conv1.weight", &[8, 1, 3, 3], &[0.0; 72]);
        let err = decode::<f32>(&enc.buf, "m").unwrap_err().to_string();
        assert!(err.contains("conv1.weight") && err.contains("disagrees"), "{err}");
    }
}
