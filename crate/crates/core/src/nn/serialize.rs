//! Binary model container.
//!
//! Layout (all integers `u32` little-endian, all reals `f64` little-endian):
//!
//! ```text
//! b"CFMODEL\0"  version(=1)  ndim  dims[ndim]  nlayers
//! per layer: kind:u8
//!   0 dense : in out weights[out*in] bias[out]
//!   1 conv  : in_c in_h in_w out_c k_h k_w s_w s_h kernel[...] bias[out_c]
//!   2 relu  : dim
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::layer::{Conv2d, ConvGeometry, Dense, Layer};
use super::model::Model;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CFMODEL\0";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, model.input_shape().len());
    for &d in model.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, model.layers().len());
    for layer in model.layers() {
        match layer {
            Layer::Dense(d) => {
                out.push(0);
                put_u32(&mut out, d.in_dim());
                put_u32(&mut out, d.out_dim());
                put_f64s(&mut out, d.weight());
                put_f64s(&mut out, d.bias());
            }
            Layer::Conv2d(c) => {
                out.push(1);
                let g = c.geometry();
                for v in [
                    g.in_channels,
                    g.in_h,
                    g.in_w,
                    g.out_channels,
                    g.kernel_h,
                    g.kernel_w,
                    g.stride_w,
                    g.stride_h,
                ] {
                    put_u32(&mut out, v);
                }
                put_f64s(&mut out, c.kernel());
                put_f64s(&mut out, c.bias());
            }
            Layer::Relu { dim } => {
                out.push(2);
                put_u32(&mut out, *dim);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(field, "unexpected end of model file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(field, "length overflow"))?;
        let b = self.take(len, field)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format("magic", "not a model file"));
    }
    let version = r.u32("version")?;
    if version as u32 != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let ndim = r.u32("input_shape")?;
    let input_shape = (0..ndim)
        .map(|_| r.u32("input_shape"))
        .collect::<Result<Vec<_>>>()?;
    let nlayers = r.u32("layer_count")?;
    let mut layers = Vec::with_capacity(nlayers.min(1024));
    for i in 0..nlayers {
        let field = format!("layer[{i}]");
        let kind = r.take(1, &field)?[0];
        let layer = match kind {
            0 => {
                let (inp, out) = (r.u32(&field)?, r.u32(&field)?);
                let w = r.f64s(inp * out, &field)?;
                let b = r.f64s(out, &field)?;
                Layer::Dense(Dense::new(inp, out, w, b)?)
            }
            1 => {
                let mut v = [0usize; 8];
                for slot in &mut v {
                    *slot = r.u32(&field)?;
                }
                let g = ConvGeometry {
                    in_channels: v[0],
                    in_h: v[1],
                    in_w: v[2],
                    out_channels: v[3],
                    kernel_h: v[4],
                    kernel_w: v[5],
                    stride_w: v[6],
                    stride_h: v[7],
                };
                let k = r.f64s(g.kernel_len(), &field)?;
                let b = r.f64s(g.out_channels, &field)?;
                Layer::Conv2d(Conv2d::new(g, k, b)?)
            }
            2 => Layer::Relu {
                dim: r.u32(&field)?,
            },
            other => return Err(Error::format(field, format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailer", "trailing bytes after last layer"));
    }
    Model::new(input_shape, layers)
}

/// Hex SHA-256 of the serialized model.
pub fn model_hash(model: &Model) -> String {
    hex::encode(Sha256::digest(to_bytes(model)))
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = std::fs::read(path.as_ref())
        .map_err(|e| Error::config(format!("cannot read model {}: {e}", path.as_ref().display())))?;
    from_bytes(&bytes)
}
