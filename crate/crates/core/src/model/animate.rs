//! Inference: whole sequences in memory and the file-producing wrapper.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, Array3};
use rayon::prelude::*;

use super::{decode, encode, Model};
use crate::audio::{encode_stfx, FeatureSequence};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::manifest::{sha256_hex, RunManifest};
use crate::mesh::{save_sequence, write_obj, Mesh};
use crate::nn::{self, SpectralOps};
use crate::operators::{cache_key, compute_operators, read_cache, store_cache, SurfaceOperators};

/// Rows (frames × vertices) decoded per graph; bounds peak memory.
pub const DEFAULT_CHUNK_ROWS: usize = 16384;

/// Frames on the neutral mesh's topology.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimationSequence {
    /// `T × V × 3` positions.
    pub frames: Array3<f64>,
    pub faces: Vec<[usize; 3]>,
}

impl AnimationSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn num_vertices(&self) -> usize {
        self.frames.dim().1
    }

    pub fn frame(&self, j: usize) -> Array2<f64> {
        self.frames.slice(s![j, .., ..]).to_owned()
    }

    pub fn frame_mesh(&self, j: usize) -> Mesh {
        let v = self.frame(j);
        let verts = v.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
        Mesh::new_unchecked(verts, self.faces.clone())
    }
}

/// Animates `neutral` for every row of `features` (already aligned to the
/// output frame rate).
pub fn animate(
    neutral: &Mesh,
    ops: &SurfaceOperators,
    features: &FeatureSequence,
    model: &Model,
) -> Result<AnimationSequence> {
    animate_chunked(neutral, ops, features.data(), model, DEFAULT_CHUNK_ROWS)
}

/// As [`animate`], decoding at most `max(1, chunk_rows / V)` frames per
/// graph. Chunks run on the rayon pool; results do not depend on it.
pub fn animate_chunked(
    neutral: &Mesh,
    ops: &SurfaceOperators,
    features: &Array2<f64>,
    model: &Model,
    chunk_rows: usize,
) -> Result<AnimationSequence> {
    let v = neutral.num_vertices();
    ops.check_shape(v)?;
    model.check_features(features)?;
    let sops = SpectralOps::new(ops);
    let positions = neutral.positions();

    // One encoder pass and one recurrent pass per sequence.
    let (f, latent) = {
        let g = Graph::inference();
        let p = nn::bind(&g, &model.params);
        let f = encode(&g, &p, g.constant(positions.clone()), &sops);
        let lat = p.audio.forward(&g, model.config.cell, g.constant(features.clone()))?;
        ((*g.value(f)).clone(), (*g.value(lat)).clone())
    };
    check_finite(&f, "geometry descriptors")?;

    let t = latent.nrows();
    let per_chunk = (chunk_rows / v.max(1)).max(1);
    let ranges: Vec<(usize, usize)> = (0..t)
        .step_by(per_chunk)
        .map(|a| (a, (a + per_chunk).min(t)))
        .collect();
    let decoder = &model.params.decoder;
    let chunks: Vec<Result<Array2<f64>>> = ranges
        .par_iter()
        .map(|&(a, b)| {
            let g = Graph::inference();
            let dec = nn::bind(&g, decoder);
            let fv = g.constant(f.clone());
            let lv = g.constant(latent.slice(s![a..b, ..]).to_owned());
            let d = (*g.value(decode(&g, &dec, fv, lv, &sops))).clone();
            check_finite(&d, &format!("decoded displacements, frames {a}..{b}"))?;
            Ok(d)
        })
        .collect();

    let mut frames = Array3::zeros((t, v, 3));
    for (&(a, b), chunk) in ranges.iter().zip(chunks) {
        let d = chunk?;
        for j in a..b {
            let rows = d.slice(s![(j - a) * v..(j - a + 1) * v, ..]);
            let mut out = frames.slice_mut(s![j, .., ..]);
            out.assign(&rows);
            out += &positions;
        }
    }
    Ok(AnimationSequence {
        frames,
        faces: neutral.faces().to_vec(),
    })
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    match a.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!(
            "{what}, row {}, column {}",
            i / a.ncols(),
            i % a.ncols()
        ))),
        None => Ok(()),
    }
}

/// Where the operator bundle comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSource {
    Compute,
    /// Reused when its key matches the mesh and k; rebuilt and rewritten
    /// otherwise.
    Cache(PathBuf),
    /// Used as-is; only the vertex count is checked.
    Explicit(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    None,
    Hit,
    Miss,
    Stale,
    Explicit,
}

impl fmt::Display for CacheStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheStatus::None => "none",
            CacheStatus::Hit => "hit",
            CacheStatus::Miss => "miss",
            CacheStatus::Stale => "stale",
            CacheStatus::Explicit => "explicit",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AnimateOptions {
    pub fps: f64,
    pub operators: OperatorSource,
    pub chunk_rows: usize,
}

impl Default for AnimateOptions {
    fn default() -> Self {
        AnimateOptions {
            fps: 30.0,
            operators: OperatorSource::Compute,
            chunk_rows: DEFAULT_CHUNK_ROWS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub cache: CacheStatus,
    pub files: Vec<PathBuf>,
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

/// Output frame count for a clip: `round(duration × fps)`, at least 1.
pub fn frame_count(duration: f64, fps: f64) -> usize {
    ((duration * fps).round() as usize).max(1)
}

/// Resolves operators, animates at `opts.fps`, and writes
/// `frame_XXXX.obj` files plus `run_manifest.txt` into `out_dir`.
pub fn animate_to_dir(
    neutral: &Mesh,
    features: &FeatureSequence,
    model: &Model,
    out_dir: &Path,
    opts: &AnimateOptions,
) -> Result<RunReport> {
    if !(opts.fps.is_finite() && opts.fps > 0.0) {
        return Err(Error::invalid(format!("fps {} must be positive", opts.fps)));
    }
    model.check_features(features.data())?;
    let v = neutral.num_vertices();
    let k = model.config.k_for(v);

    let start = Instant::now();
    let (ops, cache) = resolve_operators(neutral, k, &opts.operators)?;
    let t_ops = start.elapsed().as_secs_f64();

    let frames = frame_count(features.duration(), opts.fps);
    let aligned = features.resampled(frames)?;
    let start = Instant::now();
    let seq = animate_chunked(neutral, &ops, aligned.data(), model, opts.chunk_rows)?;
    let t_anim = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let files = save_sequence(&seq.frames, &seq.faces, out_dir)?;
    let t_write = start.elapsed().as_secs_f64();

    let mut m = RunManifest::new();
    m.set("command", "animate")
        .set("model_sha256", sha256_hex(&super::encode_checkpoint(model)))
        .set("features_sha256", sha256_hex(&encode_stfx(features)))
        .set("neutral_sha256", sha256_hex(write_obj(neutral.vertices(), neutral.faces()).as_bytes()))
        .set("vertices", v)
        .set("faces", neutral.num_faces())
        .set("feature_frames", features.frames())
        .set("feature_dim", features.dim())
        .set("feature_rate", features.source_rate())
        .set("fps", opts.fps)
        .set("frames", frames)
        .set("k", ops.k())
        .set("hidden", model.config.hidden)
        .set("blocks", model.config.blocks)
        .set("cell", model.config.cell.name())
        .set("cache", cache);
    match &opts.operators {
        OperatorSource::Cache(p) | OperatorSource::Explicit(p) => {
            m.set("cache_path", p.display());
        }
        OperatorSource::Compute => {}
    }
    m.set("time_operators_s", format!("{t_ops:.6}"))
        .set("time_animate_s", format!("{t_anim:.6}"))
        .set("time_write_s", format!("{t_write:.6}"));
    let manifest_path = out_dir.join("run_manifest.txt");
    m.write(&manifest_path)?;
    Ok(RunReport {
        cache,
        files,
        manifest: m,
        manifest_path,
    })
}

fn resolve_operators(
    mesh: &Mesh,
    k: usize,
    source: &OperatorSource,
) -> Result<(SurfaceOperators, CacheStatus)> {
    match source {
        OperatorSource::Compute => Ok((compute_operators(mesh, k)?, CacheStatus::None)),
        OperatorSource::Explicit(path) => {
            let (_, ops) = read_cache(path)?;
            if ops.num_vertices() != mesh.num_vertices() {
                return Err(Error::VertexCountMismatch {
                    context: format!("operator cache {}", path.display()),
                    expected: mesh.num_vertices(),
                    found: ops.num_vertices(),
                });
            }
            ops.check_shape(mesh.num_vertices())?;
            Ok((ops, CacheStatus::Explicit))
        }
        OperatorSource::Cache(path) => {
            let status = if path.exists() {
                let (key, ops) = read_cache(path)?;
                if key == cache_key(mesh, k) {
                    ops.check_shape(mesh.num_vertices())?;
                    return Ok((ops, CacheStatus::Hit));
                }
                CacheStatus::Stale
            } else {
                CacheStatus::Miss
            };
            let ops = compute_operators(mesh, k)?;
            store_cache(&ops, mesh, path)?;
            Ok((ops, status))
        }
    }
}
