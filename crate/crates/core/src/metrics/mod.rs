//! Evaluation metrics and per-vertex diagnostic fields.
//!
//! Vertex errors are squared Euclidean distances. Sequences are
//! `T × V × 3` arrays on one topology.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, VertexMask};
use crate::model::Model;
use crate::operators::SurfaceOperators;

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
    if mask.indices().last().is_some_and(|&i| i >= v) {
        return Err(Error::invalid(format!("mask exceeds {v} vertices")));
    }
    Ok(())
}

fn sq(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>, j: usize, k: usize) -> f64 {
    (0..3).map(|c| (pred[[j, k, c]] - gt[[j, k, c]]).powi(2)).sum()
}

fn max_over(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>, j: usize, idx: impl Iterator<Item = usize>) -> f64 {
    idx.map(|k| sq(pred, gt, j, k)).fold(0.0, f64::max)
}

/// Per frame, the largest squared error over the lip vertices.
pub fn lve_per_frame(pred: ArrayView3<f64>, gt: ArrayView3<f64>, lip: &VertexMask) -> Result<Vec<f64>> {
    let (t, v) = check_pair(&pred, &gt)?;
    check_mask(lip, v)?;
    Ok((0..t).map(|j| max_over(&pred, &gt, j, lip.indices().iter().copied())).collect())
}

/// Per frame, the largest squared error over all vertices.
pub fn mve_per_frame(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<Vec<f64>> {
    let (t, v) = check_pair(&pred, &gt)?;
    Ok((0..t).map(|j| max_over(&pred, &gt, j, 0..v)).collect())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Lip vertex error: frame average of the worst lip vertex.
pub fn lve(pred: ArrayView3<f64>, gt: ArrayView3<f64>, lip: &VertexMask) -> Result<f64> {
    lve_per_frame(pred, gt, lip).map(|x| mean(&x))
}

/// Max vertex error: frame average of the worst vertex.
pub fn mve(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    mve_per_frame(pred, gt).map(|x| mean(&x))
}

/// Population standard deviation over frames of each masked vertex's
/// distance from the neutral position.
pub fn dynamics(seq: ArrayView3<f64>, neutral: ArrayView2<f64>, mask: &VertexMask) -> Result<Vec<f64>> {
    let (t, v, _) = seq.dim();
    if neutral.dim() != (v, 3) {
        return Err(Error::shape(format!("neutral {:?} for {v} vertices", neutral.dim())));
    }
    check_mask(mask, v)?;
    if t < 2 {
        return Err(Error::invalid("dynamics need at least 2 frames"));
    }
    Ok(mask
        .indices()
        .iter()
        .map(|&k| {
            let d: Vec<f64> = (0..t)
                .map(|j| (0..3).map(|c| (seq[[j, k, c]] - neutral[[k, c]]).powi(2)).sum::<f64>().sqrt())
                .collect();
            let m = mean(&d);
            (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / t as f64).sqrt()
        })
        .collect())
}

/// Per upper-face vertex, ground-truth minus predicted dynamics.
pub fn fdd_per_vertex(
    pred: ArrayView3<f64>,
    gt: ArrayView3<f64>,
    neutral: ArrayView2<f64>,
    upper: &VertexMask,
) -> Result<Vec<f64>> {
    check_pair(&pred, &gt)?;
    let dg = dynamics(gt, neutral, upper)?;
    let dp = dynamics(pred, neutral, upper)?;
    Ok(dg.iter().zip(&dp).map(|(a, b)| a - b).collect())
}

/// Upper-face dynamics deviation; negative when the prediction moves more
/// than the ground truth.
pub fn fdd(pred: ArrayView3<f64>, gt: ArrayView3<f64>, neutral: ArrayView2<f64>, upper: &VertexMask) -> Result<f64> {
    fdd_per_vertex(pred, gt, neutral, upper).map(|x| mean(&x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub frames: usize,
    pub vertices: usize,
    /// m².
    pub lve: f64,
    pub mve: f64,
    /// Undefined for single-frame sequences.
    pub fdd: Option<f64>,
    /// Mean squared vertex distance.
    pub mse: f64,
    pub lve_frames: Vec<f64>,
    pub mve_frames: Vec<f64>,
    /// Per upper-face vertex, in mask order.
    pub fdd_vertices: Vec<f64>,
}

pub fn evaluate_sequences(
    pred: ArrayView3<f64>,
    gt: ArrayView3<f64>,
    neutral: ArrayView2<f64>,
    lip: &VertexMask,
    upper: &VertexMask,
) -> Result<MetricReport> {
    let (t, v) = check_pair(&pred, &gt)?;
    let lve_frames = lve_per_frame(pred, gt, lip)?;
    let mve_frames = mve_per_frame(pred, gt)?;
    let fdd_vertices = if t >= 2 {
        fdd_per_vertex(pred, gt, neutral, upper)?
    } else {
        check_mask(upper, v)?;
        Vec::new()
    };
    Ok(MetricReport {
        frames: t,
        vertices: v,
        lve: mean(&lve_frames),
        mve: mean(&mve_frames),
        fdd: (!fdd_vertices.is_empty()).then(|| mean(&fdd_vertices)),
        mse: crate::training::loss_mse(pred, gt)?,
        lve_frames,
        mve_frames,
        fdd_vertices,
    })
}

impl MetricReport {
    /// `frame,lve,mve` rows.
    pub fn frames_csv(&self) -> String {
        let mut s = String::from("frame,lve,mve\n");
        for (j, (a, b)) in self.lve_frames.iter().zip(&self.mve_frames).enumerate() {
            let _ = writeln!(s, "{j},{a:e},{b:e}");
        }
        s
    }

    /// `key: value` summary; LVE is also given in units of 1e-5 m².
    pub fn summary(&self) -> String {
        let fdd = self.fdd.map(|x| format!("{x:e}")).unwrap_or_else(|| "undefined".into());
        format!(
            "frames: {}\nvertices: {}\nlve: {:e}\nlve_x1e5: {:.6}\nmve: {:e}\nfdd: {}\nmse: {:e}\n",
            self.frames,
            self.vertices,
            self.lve,
            self.lve * 1e5,
            self.mve,
            fdd,
            self.mse
        )
    }
}

/// Mean distance of each vertex from its first-frame position over frames
/// `1..T`.
pub fn motion_heatmap(seq: ArrayView3<f64>) -> Result<Vec<f64>> {
    let (t, v, _) = seq.dim();
    if t < 2 {
        return Err(Error::invalid("motion heatmap needs at least 2 frames"));
    }
    Ok((0..v)
        .map(|k| {
            (1..t)
                .map(|j| (0..3).map(|c| (seq[[j, k, c]] - seq[[0, k, c]]).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / (t - 1) as f64
        })
        .collect())
}

/// Encoder descriptor norms divided by their maximum.
pub fn descriptor_norm_map(neutral: &Mesh, ops: &SurfaceOperators, model: &Model) -> Result<Vec<f64>> {
    let f = model.descriptors(neutral, ops)?;
    relative_row_norms(&f)
}

pub fn relative_row_norms(f: &Array2<f64>) -> Result<Vec<f64>> {
    let norms: Vec<f64> = f.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::NonFinite("descriptor norms are all zero or non-finite".into()));
    }
    Ok(norms.into_iter().map(|x| x / max).collect())
}

/// Blue at 0, red at `max`, through white-free linear blend.
pub fn heat_color(x: f64, max: f64) -> [f64; 3] {
    let s = if max > 0.0 { (x / max).clamp(0.0, 1.0) } else { 0.0 };
    [s, 0.0, 1.0 - s]
}

/// Writes `values` one per line to `sidecar` and an OBJ with per-vertex
/// colors to `obj`.
pub fn save_heatmap(mesh: &Mesh, values: &[f64], sidecar: &Path, obj: &Path) -> Result<()> {
    if values.len() != mesh.num_vertices() {
        return Err(Error::VertexCountMismatch {
            context: "heatmap values".into(),
            expected: mesh.num_vertices(),
            found: values.len(),
        });
    }
    let mut s = String::new();
    for x in values {
        let _ = writeln!(s, "{x:?}");
    }
    std::fs::write(sidecar, s).map_err(|e| Error::io(sidecar, e))?;
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mut o = String::new();
    for (p, &x) in mesh.vertices().iter().zip(values) {
        let c = heat_color(x, max);
        let _ = writeln!(o, "v {:?} {:?} {:?} {:.6} {:.6} {:.6}", p[0], p[1], p[2], c[0], c[1], c[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(o, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    std::fs::write(obj, o).map_err(|e| Error::io(obj, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MaskLabel;
    use ndarray::Array3;

    fn zeros(t: usize, v: usize) -> Array3<f64> {
        Array3::zeros((t, v, 3))
    }

    fn mask(idx: Vec<usize>, v: usize) -> VertexMask {
        VertexMask::new(idx, MaskLabel::Lip, v).unwrap()
    }

    #[test]
    fn hand_values() {
        let gt = zeros(1, 10);
        let mut pred = gt.clone();
        pred[[0, 2, 0]] = 0.001;
        let lip = mask(vec![1, 2, 3], 10);
        assert!((lve(pred.view(), gt.view(), &lip).unwrap() - 1e-6).abs() < 1e-18);
        assert_eq!(lve(gt.view(), gt.view(), &lip).unwrap(), 0.0);

        let gt = zeros(2, 4);
        let mut pred = gt.clone();
        pred[[0, 0, 1]] = 1e-3;
        pred[[1, 1, 2]] = 2e-3;
        let lip = mask(vec![0, 1], 4);
        assert!((lve(pred.view(), gt.view(), &lip).unwrap() - 2.5e-6).abs() < 1e-18);

        let mut pred = zeros(2, 4);
        pred[[1, 3, 0]] = 0.5;
        assert_eq!(lve(pred.view(), gt.view(), &lip).unwrap(), 0.0);
        assert!(mve(pred.view(), gt.view()).unwrap() > 0.0);
        let d = [0.1, -0.2, 0.3];
        let shifted = Array3::from_shape_fn((3, 5, 3), |(_, _, c)| d[c]);
        assert!((mve(shifted.view(), zeros(3, 5).view()).unwrap() - 0.14).abs() < 1e-15);
    }

    #[test]
    fn fdd_hand_values() {
        let neutral = Array2::zeros((5, 3));
        let upper = VertexMask::new((0..5).collect(), MaskLabel::UpperFace, 5).unwrap();
        let pred = zeros(2, 5);
        let mut gt = zeros(2, 5);
        gt[[1, 2, 0]] = 2e-3;
        let f = fdd(pred.view(), gt.view(), neutral.view(), &upper).unwrap();
        assert!((f - 2e-4).abs() < 1e-18, "{f}");
        assert_eq!(fdd(gt.view(), gt.view(), neutral.view(), &upper).unwrap(), 0.0);
        assert!(fdd(gt.view(), pred.view(), neutral.view(), &upper).unwrap() < 0.0);
        assert!(fdd(pred.slice(ndarray::s![..1, .., ..]), pred.slice(ndarray::s![..1, .., ..]), neutral.view(), &upper).is_err());
    }

    #[test]
    fn heatmap_hand_values() {
        let mut seq = zeros(4, 6);
        assert!(motion_heatmap(seq.view()).unwrap().iter().all(|&x| x == 0.0));
        for j in 1..4 {
            seq[[j, 4, 1]] = 2e-3;
        }
        let h = motion_heatmap(seq.view()).unwrap();
        assert_eq!(h.len(), 6);
        assert!((h[4] - 2e-3).abs() < 1e-18);
        assert!(motion_heatmap(zeros(1, 6).view()).is_err());
    }

    #[test]
    fn relative_norms() {
        let f = Array2::from_shape_vec((3, 2), vec![3.0, 4.0, 0.0, 1.0, 0.6, 0.8]).unwrap();
        assert_eq!(relative_row_norms(&f).unwrap(), vec![1.0, 0.2, 0.2]);
        assert!(relative_row_norms(&Array2::zeros((3, 2))).is_err());
        assert_eq!(heat_color(0.0, 2.0), [0.0, 0.0, 1.0]);
        assert_eq!(heat_color(2.0, 2.0), [1.0, 0.0, 0.0]);
    }
}
