//! Supervised training: losses, optimizer, dataset I/O, synthetic harness
//! and the epoch loop.

pub mod adam;
pub mod dataset;
pub mod loss;
pub mod synth;

pub use adam::{clip_global_norm, global_norm, AdamConfig, AdamState};
pub use dataset::{load_dataset, load_entry, write_dataset, DatasetManifest, ManifestEntry, TrainingSample};
pub use loss::{loss_masked, loss_mse, loss_velocity, masked_var, mse_var, velocity_var};
pub use synth::{synth_dataset, synth_dataset_with, SynthConfig};

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::CellKind;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::mesh::VertexMask;
use crate::model::{predict, save_checkpoint, Model, ModelConfig, ModelParams};
use crate::nn::{self, ParamTree, SpectralOps, Tensor};
use crate::operators::compute_operators;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub w_mse: f64,
    pub w_mask: f64,
    pub w_vel: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Fraction of samples (after the seeded shuffle) held out.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            w_mse: 1.0,
            w_mask: 0.0,
            w_vel: 0.0,
            seed: 0,
            clip_norm: 1.0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.w_mse > 0.0) || !(self.w_mask >= 0.0) || !(self.w_vel >= 0.0) {
            return bad("loss weights must be non-negative with w_mse > 0");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            mse: self.w_mse,
            mask: self.w_mask,
            velocity: self.w_vel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mse: f64,
    pub mask: f64,
    pub velocity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mse: 1.0,
            mask: 0.0,
            velocity: 0.0,
        }
    }
}

/// A sample with its operators built and tensors laid out for the model.
pub struct PreparedSample {
    pub id: String,
    pub positions: Array2<f64>,
    pub target: Array2<f64>,
    pub features: Array2<f64>,
    pub lip: VertexMask,
    pub frames: usize,
    pub vertices: usize,
    pub ops: Arc<SpectralOps>,
}

pub fn prepare(sample: &TrainingSample, k: usize) -> Result<PreparedSample> {
    let wrap = |e: Error| Error::Sample {
        sample: sample.id.clone(),
        source: Box::new(e),
    };
    let ops = compute_operators(&sample.neutral, k).map_err(wrap)?;
    Ok(PreparedSample {
        id: sample.id.clone(),
        positions: sample.neutral.positions(),
        target: sample.target_rows(),
        features: sample.features.data().clone(),
        lip: sample.lip.clone(),
        frames: sample.num_frames(),
        vertices: sample.num_vertices(),
        ops: SpectralOps::new(&ops),
    })
}

/// Loss values of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub masked: Option<f64>,
    pub velocity: Option<f64>,
}

/// Taped loss terms of one sample.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    pub mse: Var,
    pub masked: Option<Var>,
    pub velocity: Option<Var>,
}

/// Records the weighted loss of `s` under bound parameters `p`.
pub fn objective(
    g: &Graph,
    p: &ModelParams<Var>,
    cell: CellKind,
    s: &PreparedSample,
    w: &LossWeights,
) -> Result<Objective> {
    let feats = g.constant(s.features.clone());
    let pred = predict(g, p, cell, &s.positions, feats, &s.ops)?;
    let gt = g.constant(s.target.clone());
    let (t, v) = (s.frames, s.vertices);
    let mse = mse_var(g, pred, gt, t, v);
    let mut total = g.scale(mse, w.mse);
    let masked = (w.mask > 0.0).then(|| masked_var(g, pred, gt, &s.lip, t, v));
    if let Some(m) = masked {
        total = g.add(total, g.scale(m, w.mask));
    }
    let velocity = if w.velocity > 0.0 {
        if t < 2 {
            return Err(Error::invalid("velocity loss needs at least 2 frames"));
        }
        Some(velocity_var(g, pred, gt, t, v))
    } else {
        None
    };
    if let Some(vl) = velocity {
        total = g.add(total, g.scale(vl, w.velocity));
    }
    Ok(Objective {
        total,
        mse,
        masked,
        velocity,
    })
}

fn parts(g: &Graph, o: &Objective) -> LossParts {
    let val = |v: Var| g.value(v)[[0, 0]];
    LossParts {
        total: val(o.total),
        mse: val(o.mse),
        masked: o.masked.map(val),
        velocity: o.velocity.map(val),
    }
}

/// Weighted loss and its exact gradient for every parameter leaf, in
/// visiting order.
pub fn sample_gradients(model: &Model, s: &PreparedSample, w: &LossWeights) -> Result<(LossParts, Vec<Tensor>)> {
    let wrap = |e: Error| Error::Sample {
        sample: s.id.clone(),
        source: Box::new(e),
    };
    let g = Graph::new();
    let mut vars = Vec::new();
    let p = model.params.map_named("", &mut |_, t| {
        let v = g.param(t.clone());
        vars.push(v);
        v
    });
    let o = objective(&g, &p, model.config.cell, s, w).map_err(wrap)?;
    let lp = parts(&g, &o);
    if !lp.total.is_finite() {
        return Err(wrap(Error::NonFinite("training loss".into())));
    }
    let grads = g.backward(o.total);
    let shapes = nn::leaf_shapes(&model.params);
    let mut out = Vec::with_capacity(vars.len());
    for (var, (name, shape)) in vars.into_iter().zip(shapes) {
        let gr = grads.get_or_zeros(var, shape);
        if gr.iter().any(|x| !x.is_finite()) {
            return Err(wrap(Error::NonFinite(format!("gradient of {name}"))));
        }
        out.push(gr);
    }
    Ok((lp, out))
}

/// Inference-mode loss values.
pub fn evaluate(model: &Model, s: &PreparedSample, w: &LossWeights) -> Result<LossParts> {
    let g = Graph::inference();
    let p = nn::bind(&g, &model.params);
    let o = objective(&g, &p, model.config.cell, s, w).map_err(|e| Error::Sample {
        sample: s.id.clone(),
        source: Box::new(e),
    })?;
    Ok(parts(&g, &o))
}

/// MSE of predicting the neutral face for every frame.
pub fn zero_baseline_mse(s: &TrainingSample) -> f64 {
    let (t, v, _) = s.frames.dim();
    let neutral = s.neutral.positions();
    let mut total = 0.0;
    for j in 0..t {
        let d = &s.frames.slice(ndarray::s![j, .., ..]) - &neutral;
        total += d.iter().map(|x| x * x).sum::<f64>();
    }
    total / (t * v) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted loss over the epoch's steps (before each update).
    pub train_loss: f64,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub history: Vec<EpochRecord>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse,train_loss,grad_norm\n");
        for r in &self.history {
            let val = r.val_mse.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{},{:e},{:e}", r.epoch, r.train_mse, val, r.train_loss, r.grad_norm);
        }
        s
    }
}

/// Canonical order (by id), seeded shuffle, last `fraction` held out.
/// Returns indices into `samples`.
pub fn split(samples: &[TrainingSample], seed: u64, fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));
    if let Some(w) = order.windows(2).find(|w| samples[w[0]].id == samples[w[1]].id) {
        return Err(Error::Config(format!("duplicate sample id {}", samples[w[0]].id)));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (samples.len() as f64 * fraction).floor() as usize;
    let val = order.split_off(samples.len() - n_val);
    Ok((order, val))
}

/// Runs the epoch loop. `on_epoch` sees each record as it is produced.
pub fn train(
    samples: &[TrainingSample],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    for s in samples {
        if s.features.dim() != model_config.feature_dim {
            return Err(Error::Sample {
                sample: s.id.clone(),
                source: Box::new(Error::shape(format!(
                    "features have D = {}, model expects {}",
                    s.features.dim(),
                    model_config.feature_dim
                ))),
            });
        }
    }
    let (train_idx, val_idx) = split(samples, cfg.seed, cfg.validation_fraction)?;
    let prepared: Vec<PreparedSample> = samples
        .par_iter()
        .map(|s| prepare(s, model_config.k_for(s.num_vertices())))
        .collect::<Result<_>>()?;

    let mut canonical = train_idx.clone();
    canonical.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));
    let edge = canonical.iter().map(|&i| samples[i].neutral.mean_edge_length()).sum::<f64>()
        / canonical.len() as f64;
    let mut model = Model::init(model_config.clone(), edge, cfg.seed)?;
    let mut adam = AdamState::new(&model.params);
    let adam_cfg = cfg.adam();
    let weights = cfg.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, model.clone(), 0);
    for epoch in 1..=cfg.epochs {
        let mut order = canonical.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut mse_sum, mut norm_sum) = (0.0, 0.0, 0.0);
        for &i in &order {
            let (lp, mut grads) = sample_gradients(&model, &prepared[i], &weights)?;
            norm_sum += clip_global_norm(&mut grads, cfg.clip_norm);
            adam.update(&mut model.params, &grads, &adam_cfg);
            loss_sum += lp.total;
            mse_sum += lp.mse;
        }
        let n = order.len() as f64;
        let val_mse = if val_idx.is_empty() {
            None
        } else {
            let per: Vec<f64> = val_idx
                .par_iter()
                .map(|&i| evaluate(&model, &prepared[i], &LossWeights::default()).map(|p| p.mse))
                .collect::<Result<_>>()?;
            Some(per.iter().sum::<f64>() / per.len() as f64)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_mse: mse_sum / n,
            val_mse,
            grad_norm: norm_sum / n,
        };
        let score = record.val_mse.unwrap_or(record.train_mse);
        if score < best.0 {
            best = (score, model.clone(), epoch);
        }
        on_epoch(&record);
        history.push(record);
    }
    let ids = |idx: &[usize]| idx.iter().map(|&i| samples[i].id.clone()).collect();
    Ok(TrainOutcome {
        best: best.1,
        best_epoch: best.2,
        last: model,
        history,
        train_ids: ids(&canonical),
        val_ids: ids(&val_idx),
    })
}

/// [`train`], then writes `best.stpm`, `last.stpm` and `loss.csv` into
/// `out_dir`.
pub fn train_to_dir(
    samples: &[TrainingSample],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let outcome = train(samples, model_config, cfg, on_epoch)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    save_checkpoint(&outcome.best, &out_dir.join("best.stpm"))?;
    save_checkpoint(&outcome.last, &out_dir.join("last.stpm"))?;
    let csv = out_dir.join("loss.csv");
    std::fs::write(&csv, outcome.loss_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(outcome)
}
