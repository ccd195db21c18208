//! Reconstruction losses over vertex sequences.
//!
//! Array forms take `T × V × 3` sequences. Taped forms take frame-major
//! `(T·V) × 3` rows, the layout the model predicts in.

use ndarray::{s, ArrayView3};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::mesh::VertexMask;

fn check_pair(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>) -> Result<(usize, usize)> {
    if pred.dim() != gt.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let (t, v, c) = pred.dim();
    if c != 3 {
        return Err(Error::shape(format!("expected xyz positions, got {c} columns")));
    }
    if t == 0 || v == 0 {
        return Err(Error::EmptySequence);
    }
    Ok((t, v))
}

fn check_mask(mask: &VertexMask, v: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    match mask.indices().last() {
        Some(&last) if last >= v => Err(Error::invalid(format!(
            "mask index {last} out of range for {v} vertices"
        ))),
        _ => Ok(()),
    }
}

fn sq_dist(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>, j: usize, k: usize) -> f64 {
    (0..3).map(|c| (pred[[j, k, c]] - gt[[j, k, c]]).powi(2)).sum()
}

/// Mean over frames and vertices of the squared vertex distance.
pub fn loss_mse(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    let (t, v) = check_pair(&pred, &gt)?;
    let mut total = 0.0;
    for j in 0..t {
        let frame: f64 = (0..v).map(|k| sq_dist(&pred, &gt, j, k)).sum();
        total += frame / v as f64;
    }
    Ok(total / t as f64)
}

/// [`loss_mse`] restricted to the masked vertices.
pub fn loss_masked(pred: ArrayView3<f64>, gt: ArrayView3<f64>, mask: &VertexMask) -> Result<f64> {
    let (t, v) = check_pair(&pred, &gt)?;
    check_mask(mask, v)?;
    let mut total = 0.0;
    for j in 0..t {
        let frame: f64 = mask.indices().iter().map(|&k| sq_dist(&pred, &gt, j, k)).sum();
        total += frame / mask.len() as f64;
    }
    Ok(total / t as f64)
}

/// Mean squared mismatch of frame-to-frame vertex velocities.
pub fn loss_velocity(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    let (t, _) = check_pair(&pred, &gt)?;
    if t < 2 {
        return Err(Error::invalid("velocity loss needs at least 2 frames"));
    }
    let vp = &pred.slice(s![1.., .., ..]) - &pred.slice(s![..t - 1, .., ..]);
    let vg = &gt.slice(s![1.., .., ..]) - &gt.slice(s![..t - 1, .., ..]);
    loss_mse(vp.view(), vg.view())
}

/// Taped [`loss_mse`] on `(t·v) × 3` rows.
pub fn mse_var(g: &Graph, pred: Var, gt: Var, t: usize, v: usize) -> Var {
    let d = g.sub(pred, gt);
    g.scale(g.sum(g.square(d)), 1.0 / (t * v) as f64)
}

/// Taped [`loss_masked`].
pub fn masked_var(g: &Graph, pred: Var, gt: Var, mask: &VertexMask, t: usize, v: usize) -> Var {
    let rows: Vec<usize> = (0..t)
        .flat_map(|j| mask.indices().iter().map(move |&k| j * v + k))
        .collect();
    let d = g.gather_rows(g.sub(pred, gt), &rows);
    g.scale(g.sum(g.square(d)), 1.0 / (t * mask.len()) as f64)
}

/// Taped [`loss_velocity`]; requires `t ≥ 2`.
pub fn velocity_var(g: &Graph, pred: Var, gt: Var, t: usize, v: usize) -> Var {
    let d = g.sub(pred, gt);
    let dv = g.sub(g.slice_rows(d, v..t * v), g.slice_rows(d, 0..(t - 1) * v));
    g.scale(g.sum(g.square(dv)), 1.0 / ((t - 1) * v) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MaskLabel;
    use ndarray::Array3;

    fn seq(t: usize, v: usize, f: impl Fn(usize, usize, usize) -> f64) -> Array3<f64> {
        Array3::from_shape_fn((t, v, 3), |(j, k, c)| f(j, k, c))
    }

    #[test]
    fn mse_hand_values() {
        let gt = seq(1, 100, |_, k, c| (k + c) as f64 * 0.01);
        assert_eq!(loss_mse(gt.view(), gt.view()).unwrap(), 0.0);
        let mut pred = gt.clone();
        pred[[0, 17, 0]] += 0.001;
        let l = loss_mse(pred.view(), gt.view()).unwrap();
        assert!((l - 1e-8).abs() < 1e-20, "{l}");
        let d = [0.01, -0.02, 0.03];
        let shifted = seq(4, 10, |j, k, c| (j * k) as f64 + d[c]);
        let base = seq(4, 10, |j, k, _| (j * k) as f64);
        let l = loss_mse(shifted.view(), base.view()).unwrap();
        assert!((l - 0.0014).abs() < 1e-15);
        assert!(loss_mse(base.view(), seq(3, 10, |_, _, _| 0.0).view()).is_err());
    }

    #[test]
    fn masked_hand_values() {
        let gt = seq(1, 30, |_, k, _| k as f64);
        let mask = VertexMask::new((0..10).collect(), MaskLabel::Lip, 30).unwrap();
        let full = VertexMask::full(30, MaskLabel::Lip).unwrap();
        let mut pred = gt.clone();
        pred[[0, 20, 1]] += 0.5;
        assert_eq!(loss_masked(pred.view(), gt.view(), &mask).unwrap(), 0.0);
        assert_eq!(
            loss_masked(pred.view(), gt.view(), &full).unwrap(),
            loss_mse(pred.view(), gt.view()).unwrap()
        );
        let mut pred = gt.clone();
        pred[[0, 3, 2]] -= 1e-3;
        let l = loss_masked(pred.view(), gt.view(), &mask).unwrap();
        assert!((l - 1e-7).abs() < 1e-19);
    }

    #[test]
    fn velocity_hand_values() {
        let gt = seq(2, 100, |_, _, _| 0.0);
        let mut moving = gt.clone();
        moving[[1, 5, 0]] = 1e-3;
        let l = loss_velocity(gt.view(), moving.view()).unwrap();
        assert!((l - 1e-8).abs() < 1e-20);
        let offset = seq(5, 7, |j, k, c| (j + 2 * k + c) as f64 * 0.1);
        let gt = seq(5, 7, |j, k, c| (j * k + c) as f64 * 0.1);
        let pred = &gt + 0.25;
        assert!(loss_velocity(pred.view(), gt.view()).unwrap() < 1e-24);
        assert!(loss_velocity(offset.view(), offset.view()).unwrap() == 0.0);
        assert!(loss_velocity(gt.slice(s![..1, .., ..]), gt.slice(s![..1, .., ..])).is_err());
    }

    #[test]
    fn taped_losses_match_array_losses() {
        let (t, v) = (3, 6);
        let gt = seq(t, v, |j, k, c| ((j * 5 + k * 3 + c) as f64).sin());
        let pred = seq(t, v, |j, k, c| ((j * 2 + k + c * 7) as f64).cos());
        let mask = VertexMask::new(vec![1, 4], MaskLabel::Lip, v).unwrap();
        let rows = |a: &Array3<f64>| a.to_shape((t * v, 3)).unwrap().to_owned();
        let g = Graph::inference();
        let (p, q) = (g.constant(rows(&pred)), g.constant(rows(&gt)));
        let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
        assert!(close(g.value(mse_var(&g, p, q, t, v))[[0, 0]], loss_mse(pred.view(), gt.view()).unwrap()));
        assert!(close(
            g.value(masked_var(&g, p, q, &mask, t, v))[[0, 0]],
            loss_masked(pred.view(), gt.view(), &mask).unwrap()
        ));
        assert!(close(
            g.value(velocity_var(&g, p, q, t, v))[[0, 0]],
            loss_velocity(pred.view(), gt.view()).unwrap()
        ));
    }
}
