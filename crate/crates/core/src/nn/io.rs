//! Binary weight files.
//!
//! Layout, all integers `u32` and all reals `f64`, little-endian:
//! `"PFNN"`, version, input `C H W`, layer count, then per layer a kind byte
//! followed by its payload. Conv layers store stride, pad, weights, bias;
//! dense layers store weights, bias; dropout stores its probability. A
//! tensor is its rank, its extents, then its values.

use std::path::Path;

use crate::error::{Error, Result};

use super::network::{Conv, Dense, Layer, Network};
use super::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PFNN";
pub const WEIGHTS_VERSION: u32 = 1;

const CONV: u8 = 1;
const RELU: u8 = 2;
const MAXPOOL: u8 = 3;
const FLATTEN: u8 = 4;
const DENSE: u8 = 5;
const DROPOUT: u8 = 6;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("extent fits u32").to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.shape().len());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * net.parameter_count() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for d in net.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, net.layers().len());
    for l in net.layers() {
        match l {
            Layer::Conv(c) => {
                out.push(CONV);
                put_u32(&mut out, c.stride);
                put_u32(&mut out, c.pad);
                put_tensor(&mut out, &c.weights);
                put_tensor(&mut out, &c.bias);
            }
            Layer::Relu => out.push(RELU),
            Layer::MaxPool => out.push(MAXPOOL),
            Layer::Flatten => out.push(FLATTEN),
            Layer::Dense(d) => {
                out.push(DENSE);
                put_tensor(&mut out, &d.weights);
                put_tensor(&mut out, &d.bias);
            }
            Layer::Dropout(p) => {
                out.push(DROPOUT);
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> std::result::Result<Tensor, String> {
        let rank = self.u32()?;
        if rank > 8 {
            return Err(format!("tensor rank {rank} at byte {}", self.pos));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor size overflows")?;
        let raw = self.take(n.checked_mul(8).ok_or("tensor size overflows")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
        if !t.all_finite() {
            return Err("non-finite parameter value".into());
        }
        Ok(t)
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<Network, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a PFNN weight file".into());
    }
    let version = r.u32()? as u32;
    if version != WEIGHTS_VERSION {
        return Err(format!("weight format version {version} (supported: {WEIGHTS_VERSION})"));
    }
    let input = [r.u32()?, r.u32()?, r.u32()?];
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        layers.push(match r.u8()? {
            CONV => {
                let (stride, pad) = (r.u32()?, r.u32()?);
                Layer::Conv(Conv { weights: r.tensor()?, bias: r.tensor()?, stride, pad })
            }
            RELU => Layer::Relu,
            MAXPOOL => Layer::MaxPool,
            FLATTEN => Layer::Flatten,
            DENSE => Layer::Dense(Dense { weights: r.tensor()?, bias: r.tensor()? }),
            DROPOUT => Layer::Dropout(r.f64()?),
            k => return Err(format!("layer {i}: unknown kind byte {k}")),
        });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Network::from_layers(input, layers).map_err(|e| e.to_string())
}

pub fn save_weights(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|reason| Error::format(path, reason))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    parse(bytes).map_err(|reason| Error::format("<memory>", reason))
}
