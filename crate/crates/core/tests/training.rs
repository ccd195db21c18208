mod common;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use talkmesh_core::audio::{CellKind, FeatureSequence};
use talkmesh_core::gradcheck::check_gradients;
use talkmesh_core::mesh::{shapes, MaskLabel, VertexMask};
use talkmesh_core::model::{encode_checkpoint, Model, ModelConfig};
use talkmesh_core::nn::{self, uniform, Linear};
use talkmesh_core::training::{
    evaluate, load_dataset, objective, prepare, sample_gradients, split, synth_dataset, synth_dataset_with,
    train, train_to_dir, write_dataset, zero_baseline_mse, LossWeights, SynthConfig, TrainConfig,
    TrainingSample,
};
use talkmesh_core::Error;

fn tiny_config(cell: CellKind) -> ModelConfig {
    ModelConfig {
        hidden: 8,
        blocks: 2,
        k: 12,
        cell,
        rnn_hidden: 4,
        rnn_layers: 2,
        feature_dim: 4,
    }
}

/// 12 vertices, 3 frames, random targets.
fn tiny_sample() -> TrainingSample {
    let neutral = common::jitter(&shapes::icosahedron(0.1), 0.01, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = neutral.positions();
    let frames = Array3::from_shape_fn((3, 12, 3), |(j, k, c)| {
        base[[k, c]] + 0.01 * common::hash_unit(j * 36 + k * 3 + c, 5)
    });
    let features = FeatureSequence::new(uniform((3, 4), 1.0, &mut rng), 30.0).unwrap();
    let lip = VertexMask::new(vec![0, 3, 7], MaskLabel::Lip, 12).unwrap();
    let upper = VertexMask::new(vec![1, 2], MaskLabel::UpperFace, 12).unwrap();
    TrainingSample::new("tiny", neutral, frames, features, lip, upper, 30.0).unwrap()
}

fn active(cfg: ModelConfig, seed: u64) -> Model {
    let mut m = Model::init(cfg, 0.05, seed).unwrap();
    let h = m.config.hidden;
    m.params.decoder.output = Linear::init(h, 3, &mut ChaCha8Rng::seed_from_u64(seed + 1));
    m
}

fn gradcheck_all_groups(cell: CellKind) {
    let sample = tiny_sample();
    let model = active(tiny_config(cell), 3);
    let prepared = prepare(&sample, 12).unwrap();
    let w = LossWeights {
        mse: 1.0,
        mask: 0.5,
        velocity: 0.5,
    };
    // Small step: hidden pre-activations of a 0.1 m mesh sit close to the
    // ReLU kink, and a wider stencil straddles it.
    let report = check_gradients(&model.params, 1e-6, &|g, p| {
        objective(g, p, cell, &prepared, &w).map(|o| o.total)
    })
    .unwrap();
    assert_eq!(report.len(), nn::leaf_shapes(&model.params).len());
    for leaf in &report {
        assert!(leaf.scale > 1e-12, "{}: zero gradient", leaf.name);
        assert!(leaf.rel_err < 1e-4, "{}: rel err {:.3e}", leaf.name, leaf.rel_err);
    }
    for group in ["time_sqrt", "mix_re", "mix_im", "mlp", "audio.projection", "audio.layer", "audio.output"] {
        assert!(report.iter().any(|l| l.name.contains(group)), "no leaf named like {group}");
    }
}

#[test]
fn every_parameter_group_matches_finite_differences_lstm() {
    gradcheck_all_groups(CellKind::Lstm);
}

#[test]
fn every_parameter_group_matches_finite_differences_gru() {
    gradcheck_all_groups(CellKind::Gru);
}

#[test]
fn gradient_vanishes_at_an_exact_fit() {
    let mut sample = tiny_sample();
    let model = active(tiny_config(CellKind::Lstm), 5);
    let prepared = prepare(&sample, 12).unwrap();
    // Make the model's own prediction the target.
    let g = talkmesh_core::autograd::Graph::inference();
    let p = nn::bind(&g, &model.params);
    let pred = talkmesh_core::model::predict(
        &g,
        &p,
        CellKind::Lstm,
        &prepared.positions,
        g.constant(prepared.features.clone()),
        &prepared.ops,
    )
    .unwrap();
    sample.frames = g.value(pred).to_shape((3, 12, 3)).unwrap().to_owned();
    let prepared = prepare(&sample, 12).unwrap();
    let (lp, grads) = sample_gradients(&model, &prepared, &LossWeights::default()).unwrap();
    assert_eq!(lp.mse, 0.0);
    let norm: f64 = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    assert!(norm < 1e-10, "{norm}");
}

#[test]
fn loss_weight_scales_gradient_linearly() {
    let sample = tiny_sample();
    let model = active(tiny_config(CellKind::Lstm), 6);
    let prepared = prepare(&sample, 12).unwrap();
    let one = LossWeights::default();
    let two = LossWeights { mse: 2.0, ..one };
    let (a, ga) = sample_gradients(&model, &prepared, &one).unwrap();
    let (b, gb) = sample_gradients(&model, &prepared, &two).unwrap();
    assert_eq!(b.total, 2.0 * a.total);
    for (x, y) in ga.iter().zip(&gb) {
        assert!(x.iter().zip(y.iter()).all(|(p, q)| *q == 2.0 * *p));
    }
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 1e-3,
        validation_fraction: 0.0,
        ..Default::default()
    }
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        frames: 8,
        subdivisions: vec![1, 2],
        ..Default::default()
    }
}

fn synth_model() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        blocks: 2,
        k: 16,
        rnn_hidden: 8,
        rnn_layers: 2,
        feature_dim: 8,
        ..Default::default()
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = synth_dataset_with(3, 2, &small_synth()).unwrap();
    let run = || encode_checkpoint(&train(&data, &synth_model(), &quick_cfg(5), &mut |_| {}).unwrap().last);
    assert_eq!(run(), run());
}

#[test]
fn sample_order_does_not_matter() {
    let data = synth_dataset_with(4, 4, &small_synth()).unwrap();
    let mut reordered = data.clone();
    reordered.reverse();
    reordered.swap(0, 2);
    let cfg = TrainConfig {
        validation_fraction: 0.25,
        ..quick_cfg(3)
    };
    let a = train(&data, &synth_model(), &cfg, &mut |_| {}).unwrap();
    let b = train(&reordered, &synth_model(), &cfg, &mut |_| {}).unwrap();
    assert_eq!(a.val_ids, b.val_ids);
    assert_eq!(encode_checkpoint(&a.last), encode_checkpoint(&b.last));
    assert_eq!(encode_checkpoint(&a.best), encode_checkpoint(&b.best));
}

#[test]
fn short_overfit_reduces_loss() {
    let data = synth_dataset_with(7, 1, &small_synth()).unwrap();
    let mut first = None;
    let out = train(&data, &synth_model(), &quick_cfg(80), &mut |r| {
        first.get_or_insert(r.train_mse);
    })
    .unwrap();
    let p = prepare(&data[0], 16).unwrap();
    let last = evaluate(&out.last, &p, &LossWeights::default()).unwrap().mse;
    assert!(last < 0.3 * first.unwrap(), "{last} vs {}", first.unwrap());
    assert!((first.unwrap() - zero_baseline_mse(&data[0])).abs() < 1e-18);
}

#[test]
fn validation_split_and_output_files() {
    let data = synth_dataset_with(9, 10, &small_synth()).unwrap();
    let (tr, val) = split(&data, 1, 0.1).unwrap();
    assert_eq!((tr.len(), val.len()), (9, 1));
    assert_eq!(split(&data, 1, 0.1).unwrap(), (tr, val));

    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        validation_fraction: 0.1,
        ..quick_cfg(2)
    };
    let out = train_to_dir(&data[..3], &synth_model(), &cfg, dir.path(), &mut |_| {}).unwrap();
    assert!(out.val_ids.is_empty());
    for f in ["best.stpm", "last.stpm", "loss.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_mse,val_mse"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn dataset_round_trips_through_disk() {
    let data = synth_dataset_with(5, 2, &small_synth()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&data, dir.path()).unwrap();
    assert_eq!(load_dataset(&manifest).unwrap(), data);
}

#[test]
fn bad_manifests_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    assert!(matches!(load_dataset(&empty), Err(Error::Config(_))));

    let data = synth_dataset_with(5, 2, &small_synth()).unwrap();
    let manifest = write_dataset(&data, dir.path()).unwrap();
    std::fs::write(dir.path().join("s001/lip.txt"), "0\n99999\n").unwrap();
    let err = load_dataset(&manifest).unwrap_err();
    assert!(matches!(&err, Error::Sample { sample, .. } if sample == "s001"), "{err}");
    assert!(err.to_string().contains("s001"));

    assert!(train(&[], &synth_model(), &quick_cfg(1), &mut |_| {}).is_err());
}

#[test]
fn mismatched_sample_is_rejected_with_its_id() {
    let s = tiny_sample();
    let err = TrainingSample::new(
        "bad",
        s.neutral.clone(),
        Array3::zeros((3, 11, 3)),
        s.features.clone(),
        s.lip.clone(),
        s.upper.clone(),
        30.0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("bad"));
    let err = TrainingSample::new(
        "short",
        s.neutral.clone(),
        s.frames.clone(),
        FeatureSequence::new(Array2::zeros((2, 4)), 30.0).unwrap(),
        s.lip.clone(),
        s.upper.clone(),
        30.0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("short"));
}

#[test]
fn mixed_topologies_train_together() {
    let data = synth_dataset(2, 2).unwrap();
    assert_ne!(data[0].num_vertices(), data[1].num_vertices());
    let cfg = ModelConfig {
        k: 16,
        ..synth_model()
    };
    let out = train(&data, &cfg, &quick_cfg(1), &mut |_| {}).unwrap();
    for s in &data {
        let p = prepare(s, 16).unwrap();
        assert!(evaluate(&out.last, &p, &LossWeights::default()).unwrap().mse.is_finite());
    }
}
