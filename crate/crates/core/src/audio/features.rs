//! Time-aligned feature matrices and the STFX interchange file.
//!
//! STFX layout, little-endian: `"STFX"`, `u32` version, `u32` T, `u32` D,
//! `f32` source rate (frames per second), then `T × D` `f32` row-major.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const STFX_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"STFX";
const HEADER: usize = 20;

/// A `T × D` feature matrix sampled at `source_rate` frames per second.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Array2<f64>,
    source_rate: f64,
}

impl FeatureSequence {
    pub fn new(data: Array2<f64>, source_rate: f64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptySequence);
        }
        if data.ncols() == 0 {
            return Err(Error::shape("feature dimension D must be at least 1"));
        }
        if !(source_rate.is_finite() && source_rate > 0.0) {
            return Err(Error::invalid(format!("source rate {source_rate} must be positive")));
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "features at frame {}, dim {}",
                idx / data.ncols(),
                idx % data.ncols()
            )));
        }
        Ok(FeatureSequence { data, source_rate })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn source_rate(&self) -> f64 {
        self.source_rate
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.source_rate
    }

    /// Linear interpolation to `target` frames; the rate is rescaled so the
    /// duration is unchanged.
    pub fn resampled(&self, target: usize) -> Result<FeatureSequence> {
        let data = resample_rows(&self.data, target)?;
        let rate = self.source_rate * target as f64 / self.frames() as f64;
        FeatureSequence::new(data, rate)
    }
}

/// Per-column linear interpolation on a normalized time axis. Endpoints
/// map exactly; a single input row is held constant.
pub fn resample_rows(x: &Array2<f64>, target: usize) -> Result<Array2<f64>> {
    if target == 0 {
        return Err(Error::invalid("target frame count must be at least 1"));
    }
    let t = x.nrows();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    if t == target {
        return Ok(x.clone());
    }
    let mut out = Array2::zeros((target, x.ncols()));
    if t == 1 || target == 1 {
        for mut row in out.rows_mut() {
            row.assign(&x.row(0));
        }
        return Ok(out);
    }
    let (num, den) = (t - 1, target - 1);
    for i in 0..target {
        let j0 = i * num / den;
        let rem = i * num - j0 * den;
        if rem == 0 {
            out.row_mut(i).assign(&x.row(j0));
        } else {
            let w = rem as f64 / den as f64;
            let (a, b) = (x.row(j0), x.row(j0 + 1));
            for (o, (&p, &q)) in out.row_mut(i).iter_mut().zip(a.iter().zip(b.iter())) {
                *o = (1.0 - w) * p + w * q;
            }
        }
    }
    Ok(out)
}

pub fn encode_stfx(f: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * f.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&STFX_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(f.source_rate as f32).to_le_bytes());
    for &x in f.data.iter() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_stfx(buf: &[u8]) -> Result<FeatureSequence> {
    const WHAT: &str = "feature file";
    if buf.len() < HEADER {
        return Err(Error::Truncated {
            what: WHAT,
            offset: buf.len(),
            needed: HEADER - buf.len(),
        });
    }
    let magic: [u8; 4] = buf[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: WHAT,
            expected: MAGIC,
            found: magic,
        });
    }
    let word = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let version = word(4);
    if version != STFX_VERSION {
        return Err(Error::VersionMismatch {
            what: WHAT,
            expected: STFX_VERSION,
            found: version,
        });
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let rate = f32::from_le_bytes(buf[16..20].try_into().unwrap()) as f64;
    let payload = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::shape(format!("feature header T={t}, D={d} overflows")))?;
    let have = buf.len() - HEADER;
    if have < payload {
        return Err(Error::Truncated {
            what: WHAT,
            offset: buf.len(),
            needed: payload - have,
        });
    }
    if have > payload {
        return Err(Error::invalid(format!(
            "feature file has {} trailing bytes",
            have - payload
        )));
    }
    let values: Vec<f64> = buf[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let data = Array2::from_shape_vec((t, d), values).unwrap();
    FeatureSequence::new(data, rate)
}

pub fn load_features(path: &Path) -> Result<FeatureSequence> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stfx(&buf)
}

pub fn save_features(f: &FeatureSequence, path: &Path) -> Result<()> {
    std::fs::write(path, encode_stfx(f)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stfx_round_trip_and_header() {
        let data = Array2::from_shape_fn((10, 768), |(i, j)| (i as f64 - j as f64 * 0.5) / 8.0);
        let f = FeatureSequence::new(data, 50.0).unwrap();
        let bytes = encode_stfx(&f);
        assert_eq!(bytes.len(), 20 + 10 * 768 * 4);
        let back = decode_stfx(&bytes).unwrap();
        assert_eq!((back.frames(), back.dim()), (10, 768));
        assert_eq!(back, f);
    }

    #[test]
    fn stfx_errors() {
        let f = FeatureSequence::new(Array2::ones((3, 2)), 30.0).unwrap();
        let bytes = encode_stfx(&f);
        assert!(matches!(decode_stfx(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_stfx(&bytes[..10]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(matches!(decode_stfx(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_stfx(&bad), Err(Error::VersionMismatch { found: 2, .. })));
        let mut bad = bytes.clone();
        let off = 20 + 4 * (2 + 1); // frame 1, dim 1
        bad[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_stfx(&bad) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("frame 1, dim 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resampling() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let y = resample_rows(&x, 3).unwrap();
        assert_eq!(y, array![[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]);
        assert_eq!(resample_rows(&y, 3).unwrap(), y);
        assert!(resample_rows(&x, 0).is_err());

        let ramp = Array2::from_shape_fn((37, 3), |(i, j)| 0.25 * i as f64 * (j as f64 + 1.0) - 2.0);
        let down = resample_rows(&ramp, 11).unwrap();
        assert_eq!(down.row(0), ramp.row(0));
        assert_eq!(down.row(10), ramp.row(36));
        let up = resample_rows(&down, 37).unwrap();
        for (a, b) in up.iter().zip(ramp.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
