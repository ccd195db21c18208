//! Binary operator cache.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "STOP"  u32 version  [u8; 32] key
//! u32 V  u32 k  u32 nnz(L)  u32 nnz(G)  u32 n_regularized
//! f64[V]            mass
//! u32[V+1] u32[nnz(L)] f64[nnz(L)]          Laplacian CSR
//! f64[k]  f64[V·k]  eigenvalues, eigenvectors (row-major V × k)
//! u32[V+1] u32[nnz(G)] f64[nnz(G)] f64[nnz(G)]  gradient CSR (re, im)
//! u32[n_regularized] regularized vertex indices
//! ```
//!
//! The key is SHA-256 over the vertex coordinates, faces and `k`.

use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{ComplexCsr, GradientDiagnostics, SurfaceOperators};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;

pub const CACHE_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"STOP";
const WHAT: &str = "operator cache";

/// Content key of a mesh and eigenbasis size.
pub fn cache_key(mesh: &Mesh, k: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"talkmesh-operators");
    h.update((mesh.num_vertices() as u64).to_le_bytes());
    h.update((mesh.num_faces() as u64).to_le_bytes());
    for v in mesh.vertices() {
        for c in v {
            h.update(c.to_bits().to_le_bytes());
        }
    }
    for f in mesh.faces() {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.update((k as u64).to_le_bytes());
    h.finalize().into()
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_csr_pattern(out: &mut Vec<u8>, m: &CsrMatrix) {
    for &p in m.indptr() {
        put_u32(out, p);
    }
    for &c in m.indices() {
        put_u32(out, c);
    }
}

pub fn encode(ops: &SurfaceOperators, key: &[u8; 32]) -> Vec<u8> {
    let v = ops.num_vertices();
    let k = ops.k();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, CACHE_VERSION as usize);
    out.extend_from_slice(key);
    put_u32(&mut out, v);
    put_u32(&mut out, k);
    put_u32(&mut out, ops.laplacian.nnz());
    put_u32(&mut out, ops.gradient.re.nnz());
    put_u32(&mut out, ops.diagnostics.regularized.len());
    put_f64s(&mut out, ops.mass.iter().copied());
    put_csr_pattern(&mut out, &ops.laplacian);
    put_f64s(&mut out, ops.laplacian.values().iter().copied());
    put_f64s(&mut out, ops.eigenvalues.iter().copied());
    put_f64s(&mut out, ops.eigenvectors.iter().copied());
    put_csr_pattern(&mut out, &ops.gradient.re);
    put_f64s(&mut out, ops.gradient.re.values().iter().copied());
    put_f64s(&mut out, ops.gradient.im.values().iter().copied());
    for &i in &ops.diagnostics.regularized {
        put_u32(&mut out, i);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(Error::Truncated {
                what: WHAT,
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<usize>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| self.overflow())?)?;
        Ok(b.chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| self.overflow())?)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn overflow(&self) -> Error {
        Error::Truncated {
            what: WHAT,
            offset: self.pos,
            needed: usize::MAX,
        }
    }
}

fn corrupt(msg: &str) -> Error {
    Error::InvalidArgument(format!("{WHAT} is corrupt: {msg}"))
}

/// Decodes a cache, returning its stored key and the bundle.
pub fn decode(buf: &[u8]) -> Result<([u8; 32], SurfaceOperators)> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: WHAT,
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32()? as u32;
    if version != CACHE_VERSION {
        return Err(Error::VersionMismatch {
            what: WHAT,
            expected: CACHE_VERSION,
            found: version,
        });
    }
    let key: [u8; 32] = r.take(32)?.try_into().unwrap();
    let v = r.u32()?;
    let k = r.u32()?;
    let nnz_l = r.u32()?;
    let nnz_g = r.u32()?;
    let n_reg = r.u32()?;

    let mass = r.f64s(v)?;
    let indptr = r.u32s(v + 1)?;
    let indices = r.u32s(nnz_l)?;
    let values = r.f64s(nnz_l)?;
    let laplacian = CsrMatrix::from_parts(v, v, indptr, indices, values)
        .ok_or_else(|| corrupt("Laplacian structure"))?;
    let eigenvalues = r.f64s(k)?;
    let eigenvectors = Array2::from_shape_vec((v, k), r.f64s(v * k)?)
        .map_err(|_| corrupt("eigenvector shape"))?;
    let indptr = r.u32s(v + 1)?;
    let indices = r.u32s(nnz_g)?;
    let re_vals = r.f64s(nnz_g)?;
    let im_vals = r.f64s(nnz_g)?;
    let re = CsrMatrix::from_parts(v, v, indptr, indices, re_vals)
        .ok_or_else(|| corrupt("gradient structure"))?;
    let im = re.with_values(im_vals);
    let regularized = r.u32s(n_reg)?;
    if r.pos != buf.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok((
        key,
        SurfaceOperators {
            mass,
            laplacian,
            eigenvalues,
            eigenvectors,
            gradient: ComplexCsr { re, im },
            diagnostics: GradientDiagnostics { regularized },
        },
    ))
}

/// Writes the bundle for `mesh` (keyed by its content and `k`).
pub fn store_cache(ops: &SurfaceOperators, mesh: &Mesh, path: &Path) -> Result<()> {
    let bytes = encode(ops, &cache_key(mesh, ops.k()));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cache without checking which mesh it belongs to.
pub fn read_cache(path: &Path) -> Result<([u8; 32], SurfaceOperators)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

/// Reads a cache and rejects it unless it was built for `mesh` and `k`.
pub fn load_cache(path: &Path, mesh: &Mesh, k: usize) -> Result<SurfaceOperators> {
    let (key, ops) = read_cache(path)?;
    if key != cache_key(mesh, k) {
        return Err(Error::HashMismatch);
    }
    Ok(ops)
}
