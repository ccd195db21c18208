//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use talkmesh_core::audio::FeatureSequence;
use talkmesh_core::mesh::{shapes, Mesh};
use talkmesh_core::model::{Model, ModelConfig};
use talkmesh_core::nn::{uniform, Linear};

pub const FEATURE_DIM: usize = 26;

/// Icosphere of radius 0.1 m: 42, 162, 642, 2562, 10242 vertices for
/// levels 1..=5.
pub fn face(level: u32) -> Mesh {
    shapes::icosphere(level, 0.1)
}

pub fn features(frames: usize, seed: u64) -> FeatureSequence {
    let data: Array2<f64> = uniform((frames, FEATURE_DIM), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    FeatureSequence::new(data, 30.0).unwrap()
}

/// Default-sized model with a non-zero decoder output layer.
pub fn model(k: usize, feature_dim: usize, seed: u64) -> Model {
    let cfg = ModelConfig {
        k,
        feature_dim,
        ..Default::default()
    };
    let mut m = Model::init(cfg, 0.01, seed).unwrap();
    let h = m.config.hidden;
    m.params.decoder.output = Linear::init(h, 3, &mut ChaCha8Rng::seed_from_u64(seed + 1));
    m
}
