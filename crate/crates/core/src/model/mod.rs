//! The end-to-end animation model: geometry encoder, audio stream and
//! displacement decoder over a shared operator bundle.

mod animate;
mod checkpoint;

pub use animate::{
    animate, animate_chunked, animate_to_dir, frame_count, DEFAULT_CHUNK_ROWS, AnimateOptions, AnimationSequence, CacheStatus, OperatorSource,
    RunReport,
};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioStream, CellKind};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::nn::{self, join, DiffusionStack, ParamTree, SpectralOps, Tensor};
use crate::operators::SurfaceOperators;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent width `h`.
    pub hidden: usize,
    pub blocks: usize,
    /// Eigenbasis size, clipped to `V − 1` per mesh.
    pub k: usize,
    pub cell: CellKind,
    /// Units per recurrent direction.
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    /// Audio feature dimension `D`.
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            blocks: 4,
            k: crate::operators::DEFAULT_K,
            cell: CellKind::Lstm,
            rnn_hidden: 32,
            rnn_layers: 3,
            feature_dim: 26,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("hidden", self.hidden),
            ("blocks", self.blocks),
            ("k", self.k),
            ("rnn_hidden", self.rnn_hidden),
            ("rnn_layers", self.rnn_layers),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        if self.hidden < 2 {
            return Err(Error::Config("model.hidden must be at least 2".into()));
        }
        Ok(())
    }

    /// Eigenbasis size used for a mesh with `v` vertices.
    pub fn k_for(&self, v: usize) -> usize {
        self.k.min(v.saturating_sub(1)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: DiffusionStack<T>,
    pub decoder: DiffusionStack<T>,
    pub audio: AudioStream<T>,
}

impl<T> ParamTree<T> for ModelParams<T> {
    type Mapped<U> = ModelParams<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map_named(&join(prefix, "encoder"), f),
            decoder: self.decoder.map_named(&join(prefix, "decoder"), f),
            audio: self.audio.map_named(&join(prefix, "audio"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.encoder.for_each_mut(&join(prefix, "encoder"), f);
        self.decoder.for_each_mut(&join(prefix, "decoder"), f);
        self.audio.for_each_mut(&join(prefix, "audio"), f);
    }
}

/// Configuration plus stored parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
}

impl Model {
    /// Fresh parameters. Diffusion times start at `edge_length²`; the
    /// decoder's last layer is zero so the untrained model outputs the
    /// neutral face.
    pub fn init(config: ModelConfig, edge_length: f64, seed: u64) -> Result<Model> {
        config.validate()?;
        if !(edge_length.is_finite() && edge_length > 0.0) {
            return Err(Error::invalid(format!("edge length {edge_length} must be positive")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let encoder = DiffusionStack::init(3, h, h, config.blocks, edge_length, false, &mut rng);
        let decoder = DiffusionStack::init(2 * h, h, 3, config.blocks, edge_length, true, &mut rng);
        let audio = AudioStream::init(
            config.cell,
            config.feature_dim,
            h,
            config.rnn_hidden,
            config.rnn_layers,
            &mut rng,
        );
        Ok(Model {
            config,
            params: ModelParams {
                encoder,
                decoder,
                audio,
            },
        })
    }

    pub fn num_parameters(&self) -> usize {
        nn::num_parameters(&self.params)
    }

    /// Per-vertex descriptors `V × h` of a neutral mesh.
    pub fn descriptors(&self, neutral: &Mesh, ops: &SurfaceOperators) -> Result<Array2<f64>> {
        ops.check_shape(neutral.num_vertices())?;
        let g = Graph::inference();
        let p = nn::bind(&g, &self.params);
        let x = g.constant(neutral.positions());
        let f = encode(&g, &p, x, &SpectralOps::new(ops));
        Ok((*g.value(f)).clone())
    }

    /// Temporal latent `T × h` for aligned features.
    pub fn temporal_latent(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_features(features)?;
        let g = Graph::inference();
        let p = nn::bind(&g, &self.params);
        let a = g.constant(features.clone());
        let v = p.audio.forward(&g, self.config.cell, a)?;
        Ok((*g.value(v)).clone())
    }

    pub fn check_features(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.config.feature_dim {
            return Err(Error::shape(format!(
                "features have D = {}, model expects {}",
                features.ncols(),
                self.config.feature_dim
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(())
    }
}

/// Descriptors `V × h` from positions `V × 3`.
pub fn encode(g: &Graph, p: &ModelParams<Var>, positions: Var, ops: &Arc<SpectralOps>) -> Var {
    p.encoder.forward(g, positions, ops)
}

/// Displacements `(n·V) × 3` for `n` frames of latent `v` (`n × h`), rows
/// ordered frame-major.
pub fn decode(g: &Graph, decoder: &DiffusionStack<Var>, f: Var, v: Var, ops: &Arc<SpectralOps>) -> Var {
    let (nv, h) = g.shape(f);
    let n = g.shape(v).0;
    let w = decoder.input.weight;
    let geo = g.matmul(f, g.slice_rows(w, 0..h));
    let aud = g.matmul(v, g.slice_rows(w, h..2 * h));
    let x = g.add(g.tile_rows(geo, n), g.repeat_rows(aud, nv));
    let x = g.add_row(x, decoder.input.bias);
    decoder.forward_from_hidden(g, x, ops)
}

/// Predicted positions `(T·V) × 3` for a whole sequence.
pub fn predict(
    g: &Graph,
    p: &ModelParams<Var>,
    cell: CellKind,
    positions: &Array2<f64>,
    features: Var,
    ops: &Arc<SpectralOps>,
) -> Result<Var> {
    let x = g.constant(positions.clone());
    let f = encode(g, p, x, ops);
    let v = p.audio.forward(g, cell, features)?;
    let t = g.shape(v).0;
    let disp = decode(g, &p.decoder, f, v, ops);
    let neutral = g.constant(tile(positions, t));
    Ok(g.add(disp, neutral))
}

/// `F_j = [f, v_j]` broadcast over vertices: `V × 2h`.
pub fn fuse(f: &Array2<f64>, v_j: &[f64]) -> Array2<f64> {
    let (n, h) = f.dim();
    let mut out = Array2::zeros((n, h + v_j.len()));
    out.slice_mut(s![.., ..h]).assign(f);
    for mut row in out.rows_mut() {
        row.slice_mut(s![h..]).assign(&ndarray::ArrayView1::from(v_j));
    }
    out
}

pub(crate) fn tile(a: &Array2<f64>, n: usize) -> Array2<f64> {
    let views = vec![a.view(); n];
    ndarray::concatenate(Axis(0), &views).unwrap()
}
