//! Synthetic face-proxy dataset.
//!
//! Each sample is a deformed icosphere. A lower cap plays the mouth: its
//! vertices open downward and widen sideways by a fixed nonlinear function
//! of smooth random features, so a correct model can fit the data exactly.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainingSample;
use crate::audio::FeatureSequence;
use crate::error::Result;
use crate::mesh::{shapes, MaskLabel, Mesh, VertexMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub fps: f64,
    pub feature_dim: usize,
    /// Icosphere radius in meters.
    pub radius: f64,
    /// Subdivision level per sample, cycled (2 → 162 vertices, 3 → 642).
    pub subdivisions: Vec<u32>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 24,
            fps: 30.0,
            feature_dim: 8,
            radius: 0.1,
            subdivisions: vec![2, 3],
        }
    }
}

/// Height below which (as a fraction of the z extent) vertices move.
const MOUTH_EXTENT: f64 = 0.45;
const LIP_EXTENT: f64 = 0.2;
const UPPER_START: f64 = 0.7;

pub fn synth_dataset(seed: u64, n: usize) -> Result<Vec<TrainingSample>> {
    synth_dataset_with(seed, n, &SynthConfig::default())
}

/// Sample `i` depends only on `seed`, `i` and the config.
pub fn synth_dataset_with(seed: u64, n: usize, cfg: &SynthConfig) -> Result<Vec<TrainingSample>> {
    (0..n).map(|i| synth_sample(seed, i, cfg)).collect()
}

pub fn synth_sample(seed: u64, index: usize, cfg: &SynthConfig) -> Result<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let subs = if cfg.subdivisions.is_empty() { 2 } else { cfg.subdivisions[index % cfg.subdivisions.len()] };
    let axes: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.85..1.15));
    let neutral = shapes::deformed(&shapes::icosphere(subs, cfg.radius), |p| {
        [p[0] * axes[0], p[1] * axes[1], p[2] * axes[2]]
    });
    let features = smooth_features(cfg.frames, cfg.feature_dim, cfg.fps, &mut rng);

    let (t, v) = (cfg.frames, neutral.num_vertices());
    let base = neutral.positions();
    let mut frames = Array3::zeros((t, v, 3));
    for j in 0..t {
        let d = target_displacement(&neutral, features.row(j).as_slice().unwrap(), cfg.radius);
        frames.slice_mut(ndarray::s![j, .., ..]).assign(&(&base + &d));
    }
    let heights = normalized_heights(&neutral);
    let pick = |f: &dyn Fn(f64) -> bool| -> Vec<usize> {
        heights.iter().enumerate().filter(|(_, &h)| f(h)).map(|(i, _)| i).collect()
    };
    let lip = VertexMask::new(pick(&|h| h < LIP_EXTENT), MaskLabel::Lip, v)?;
    let upper = VertexMask::new(pick(&|h| h > UPPER_START), MaskLabel::UpperFace, v)?;
    let features = FeatureSequence::new(features, cfg.fps)?;
    TrainingSample::new(format!("s{index:03}"), neutral, frames, features, lip, upper, cfg.fps)
}

/// Sums of three random sinusoids per dimension, rounded to f32 so the
/// on-disk features reproduce them exactly.
fn smooth_features(t: usize, d: usize, fps: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let waves: Vec<[(f64, f64, f64); 3]> = (0..d)
        .map(|_| {
            std::array::from_fn(|_| {
                (
                    rng.random_range(0.3..0.7),
                    rng.random_range(0.5..4.0),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
        })
        .collect();
    Array2::from_shape_fn((t, d), |(j, c)| {
        let time = j as f64 / fps;
        let x: f64 = waves[c].iter().map(|(a, f, p)| a * (2.0 * PI * f * time + p).sin()).sum();
        x as f32 as f64
    })
}

/// Height of each vertex as a fraction of the mesh's z extent.
pub fn normalized_heights(mesh: &Mesh) -> Vec<f64> {
    let z: Vec<f64> = mesh.vertices().iter().map(|p| p[2]).collect();
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    z.iter().map(|&x| (x - lo) / span).collect()
}

fn fixed_directions(d: usize) -> (Vec<f64>, Vec<f64>) {
    let unit = |f: &dyn Fn(usize) -> f64| {
        let v: Vec<f64> = (0..d).map(f).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    (
        unit(&|i| (1.3 * i as f64 + 0.4).cos()),
        unit(&|i| (0.7 * i as f64 + 1.1).sin()),
    )
}

/// Ground-truth displacement `V × 3` for one feature frame. Zero features
/// give zero displacement.
pub fn target_displacement(mesh: &Mesh, features: &[f64], radius: f64) -> Array2<f64> {
    let (u, w) = fixed_directions(features.len());
    let dot = |a: &[f64]| a.iter().zip(features).map(|(x, y)| x * y).sum::<f64>();
    let open = dot(&u).tanh();
    let spread = {
        let s = dot(&w).tanh();
        s + 0.5 * s * s
    };
    let heights = normalized_heights(mesh);
    let xs: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
    let cx = xs.iter().sum::<f64>() / xs.len() as f64;
    let half = xs.iter().map(|x| (x - cx).abs()).fold(0.0, f64::max).max(1e-12);
    let (jaw, widen) = (0.1 * radius, 0.04 * radius);
    let mut out = Array2::zeros((mesh.num_vertices(), 3));
    for (k, &h) in heights.iter().enumerate() {
        if h >= MOUTH_EXTENT {
            continue;
        }
        let x = 1.0 - h / MOUTH_EXTENT;
        let weight = x * x * (3.0 - 2.0 * x);
        out[[k, 0]] = weight * widen * spread * (xs[k] - cx) / half;
        out[[k, 2]] = -weight * jaw * open;
    }
    out
}
