//! Parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "STPM" | u32 version
//! u32 hidden | u32 blocks | u32 k | u8 cell | u32 rnn_hidden | u32 rnn_layers | u32 feature_dim
//! u32 tensor count
//! per tensor: u32 name length | name (utf-8) | u8 dtype (0 = f32, 1 = f64)
//!             | u32 rows | u32 cols | rows·cols values, row-major
//! ```
//!
//! Tensors are written as f64 so save/load is bit-exact; f32 tensors are
//! accepted on load.

use std::path::Path;

use ndarray::Array2;

use super::{Model, ModelConfig};
use crate::audio::CellKind;
use crate::error::{Error, Result};
use crate::nn::ParamTree;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"STPM";
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, c.hidden as u32);
    put_u32(&mut out, c.blocks as u32);
    put_u32(&mut out, c.k as u32);
    out.push(match c.cell {
        CellKind::Lstm => 0,
        CellKind::Gru => 1,
    });
    put_u32(&mut out, c.rnn_hidden as u32);
    put_u32(&mut out, c.rnn_layers as u32);
    put_u32(&mut out, c.feature_dim as u32);
    let mut tensors = Vec::new();
    model.params.for_each("", &mut |name, t| tensors.push((name.to_string(), t.clone())));
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        put_u32(&mut out, t.nrows() as u32);
        put_u32(&mut out, t.ncols() as u32);
        for x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                what,
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "checkpoint header")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: "checkpoint",
            expected: *MAGIC,
            found: magic.try_into().unwrap(),
        });
    }
    let version = r.u32("checkpoint header")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            what: "checkpoint",
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let hidden = r.u32("checkpoint header")?;
    let blocks = r.u32("checkpoint header")?;
    let k = r.u32("checkpoint header")?;
    let cell = match r.u8("checkpoint header")? {
        0 => CellKind::Lstm,
        1 => CellKind::Gru,
        other => return Err(Error::Config(format!("checkpoint: unknown cell tag {other}"))),
    };
    let config = ModelConfig {
        hidden,
        blocks,
        k,
        cell,
        rnn_hidden: r.u32("checkpoint header")?,
        rnn_layers: r.u32("checkpoint header")?,
        feature_dim: r.u32("checkpoint header")?,
    };
    config.validate()?;

    let count = r.u32("checkpoint header")?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32("checkpoint header")?;
        let name = std::str::from_utf8(r.take(len, "checkpoint tensor name")?)
            .map_err(|_| Error::Config("checkpoint: tensor name is not utf-8".into()))?
            .to_string();
        let dtype = r.u8("checkpoint header")?;
        let rows = r.u32("checkpoint header")?;
        let cols = r.u32("checkpoint header")?;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::shape("checkpoint tensor too large"))?;
        let data: Vec<f64> = match dtype {
            DTYPE_F32 => r
                .take(n.saturating_mul(4), "checkpoint tensor data")?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            DTYPE_F64 => r
                .take(n.saturating_mul(8), "checkpoint tensor data")?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            other => return Err(Error::Config(format!("checkpoint: {name}: unknown dtype {other}"))),
        };
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint tensor {name}, element {i}")));
        }
        tensors.push((name, Array2::from_shape_vec((rows, cols), data).unwrap()));
    }
    if r.pos != buf.len() {
        return Err(Error::Config(format!(
            "checkpoint: {} trailing bytes",
            buf.len() - r.pos
        )));
    }

    // Shapes come from the config; the file must supply every leaf exactly.
    let mut model = Model::init(config, 1.0, 0)?;
    let expected = crate::nn::leaf_shapes(&model.params);
    if expected.len() != tensors.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, config implies {}",
            tensors.len(),
            expected.len()
        )));
    }
    let mut err = None;
    let mut it = tensors.into_iter();
    model.params.for_each_mut("", &mut |name, slot| {
        let (n, t) = it.next().unwrap();
        if err.is_some() {
            return;
        }
        if n != name {
            err = Some(Error::Config(format!("checkpoint: expected tensor {name}, found {n}")));
        } else if t.dim() != slot.dim() {
            err = Some(Error::shape(format!(
                "checkpoint tensor {name}: shape {:?}, expected {:?}",
                t.dim(),
                slot.dim()
            )));
        } else {
            *slot = t;
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(model),
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn model() -> Model {
        let cfg = ModelConfig {
            hidden: 8,
            blocks: 2,
            k: 16,
            cell: CellKind::Gru,
            rnn_hidden: 5,
            rnn_layers: 2,
            feature_dim: 7,
        };
        let mut m = Model::init(cfg, 0.05, 11).unwrap();
        // Non-zero decoder output so every tensor carries information.
        m.params.decoder.output.weight.mapv_inplace(|_| std::f64::consts::PI / 7.0);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        let mut a = Vec::new();
        let mut b = Vec::new();
        m.params.for_each("", &mut |_, t: &Tensor| a.extend(t.iter().map(|x| x.to_bits())));
        back.params.for_each("", &mut |_, t: &Tensor| b.extend(t.iter().map(|x| x.to_bits())));
        assert_eq!(a, b);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&model());
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::VersionMismatch { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        // Config echo disagrees with stored shapes.
        let mut bad = bytes;
        bad[8] = 9;
        assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn accepts_f32_tensors() {
        let m = model();
        let mut out = encode_checkpoint(&m)[..33].to_vec();
        let mut tensors = Vec::new();
        m.params.for_each("", &mut |n, t: &Tensor| tensors.push((n.to_string(), t.clone())));
        put_u32(&mut out, tensors.len() as u32);
        for (n, t) in &tensors {
            put_u32(&mut out, n.len() as u32);
            out.extend_from_slice(n.as_bytes());
            out.push(DTYPE_F32);
            put_u32(&mut out, t.nrows() as u32);
            put_u32(&mut out, t.ncols() as u32);
            for x in t.iter() {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        let back = decode_checkpoint(&out).unwrap();
        let w = &back.params.encoder.input.weight;
        let orig = &m.params.encoder.input.weight;
        assert!(w.iter().zip(orig.iter()).all(|(a, b)| *a == (*b as f32) as f64));
    }
}
