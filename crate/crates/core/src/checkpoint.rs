//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "SANCKPT1" | version u32 | layer_count u32 | tensor_count u32
//! tensor_count × { rank u32 | dims u32×rank | f32×Π(dims) }
//! crc32 u32   (over every preceding byte)
//! ```
//!
//! Tensors appear in layer order; each layer contributes its parameters and,
//! for batchnorm, its running mean and variance.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::network::{build_generator, GeneratorSpec, Network};
use crate::rng::Prng;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"SANCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub layer_count: usize,
    pub tensors: Vec<TensorRecord>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode<T: Scalar>(net: &Network<T>) -> Result<Vec<u8>> {
    let states: Vec<_> = net.layers().iter().flat_map(Layer::state).collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, net.layers().len())?;
    put_u32(&mut out, states.len())?;
    for s in &states {
        put_u32(&mut out, s.dims.len())?;
        for &d in &s.dims {
            put_u32(&mut out, d)?;
        }
        for &v in s.data {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<CheckpointFile> {
    if bytes.len() < MAGIC.len() + 16 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("CRC mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let layer_count = r.u32()?;
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let rank = r.u32()?;
        if rank == 0 || rank > 4 {
            return Err(Error::Checkpoint(format!("tensor rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
        let data = r
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(TensorRecord { dims, data });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes before CRC".into()));
    }
    Ok(CheckpointFile {
        layer_count,
        tensors,
    })
}

/// Copy the records of `file` into `prototype`, which must have the same architecture.
pub fn restore<T: Scalar>(file: &CheckpointFile, mut prototype: Network<T>) -> Result<Network<T>> {
    if file.layer_count != prototype.layers().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} layers, network has {}",
            file.layer_count,
            prototype.layers().len()
        )));
    }
    let mut records = file.tensors.iter();
    for layer in prototype.layers_mut() {
        for slot in layer.state_mut() {
            let rec = records
                .next()
                .ok_or_else(|| Error::Checkpoint("too few tensors".into()))?;
            if rec.dims != slot.dims {
                return Err(Error::Checkpoint(format!(
                    "tensor dims {:?} do not match {:?}",
                    rec.dims, slot.dims
                )));
            }
            for (d, &v) in slot.data.iter_mut().zip(&rec.data) {
                *d = T::lit(v as f64);
            }
        }
    }
    if records.next().is_some() {
        return Err(Error::Checkpoint("too many tensors".into()));
    }
    Ok(prototype)
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointFile> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    prototype: Network<T>,
) -> Result<Network<T>> {
    restore(&read_checkpoint(path)?, prototype)
}

/// Recover the generator architecture from tensor shapes: hidden layers
/// contribute conv weight, conv bias and four batchnorm vectors; the output
/// layer only a weight and a bias.
pub fn infer_generator_spec(file: &CheckpointFile) -> Result<GeneratorSpec> {
    let bad = || Error::Checkpoint("not a generator checkpoint".into());
    let mut hidden = Vec::new();
    let mut input = None;
    let mut tensors = file.tensors.iter().peekable();
    while let Some(w) = tensors.next() {
        let [co, ci, kh, kw] = w.dims[..] else {
            return Err(bad());
        };
        if kh != kw {
            return Err(bad());
        }
        input.get_or_insert(ci);
        tensors.next().filter(|b| b.dims == [co]).ok_or_else(bad)?;
        if tensors.peek().is_none() {
            let spec = GeneratorSpec {
                input_channels: input.ok_or_else(bad)?,
                hidden_widths: hidden,
                map_dims: co,
            };
            spec.validate()?;
            return Ok(spec);
        }
        for _ in 0..4 {
            tensors.next().filter(|t| t.dims == [co]).ok_or_else(bad)?;
        }
        hidden.push(co);
    }
    Err(bad())
}

/// Load a generator without knowing its widths in advance.
pub fn load_generator(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let file = read_checkpoint(path)?;
    let spec = infer_generator_spec(&file)?;
    let net = build_generator(&spec, &mut Prng::new(0))?;
    restore(&file, net)
}
