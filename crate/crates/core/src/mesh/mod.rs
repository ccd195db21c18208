//! Triangle meshes: the single geometry representation of the engine.
//!
//! Vertex order is the mesh's identity. Nothing in this module reorders
//! vertices unless explicitly asked to via [`Mesh::permuted`].

mod io;
pub mod shapes;

pub use io::{
    load_mask, load_mesh, load_sequence, parse_obj, parse_ply, save_mask, save_mesh,
    save_sequence, write_obj, write_ply,
};

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Triangles with area at or below this (m²) are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;

/// A triangle mesh with validated invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

/// A face that violates a mesh invariant.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FaceDefect {
    pub face: usize,
    pub message: String,
}

pub(crate) fn check_vertices(vertices: &[Vec3]) -> std::result::Result<(), String> {
    for (i, v) in vertices.iter().enumerate() {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(format!("vertex {i} has non-finite coordinates {v:?}"));
        }
    }
    Ok(())
}

pub(crate) fn check_faces(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
) -> std::result::Result<(), FaceDefect> {
    let n = vertices.len();
    for (fi, f) in faces.iter().enumerate() {
        if let Some(&bad) = f.iter().find(|&&i| i >= n) {
            return Err(FaceDefect {
                face: fi,
                message: format!("face {fi} index {bad} out of range for {n} vertices"),
            });
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(FaceDefect {
                face: fi,
                message: format!("degenerate face {fi}: repeated vertex in {f:?}"),
            });
        }
        let area = geom::triangle_area(vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        if !(area > MIN_TRIANGLE_AREA) {
            return Err(FaceDefect {
                face: fi,
                message: format!("degenerate face {fi}: area {area:.3e} <= {MIN_TRIANGLE_AREA:e}"),
            });
        }
    }
    Ok(())
}

impl Mesh {
    /// Builds a mesh, checking every invariant.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        check_vertices(&vertices).map_err(|message| Error::InvalidMesh {
            line: None,
            message,
        })?;
        check_faces(&vertices, &faces).map_err(|d| Error::InvalidMesh {
            line: None,
            message: d.message,
        })?;
        Ok(Mesh { vertices, faces })
    }

    /// Builds a mesh without any validation. Downstream operators assume the
    /// invariants hold; use only for diagnostics via [`validate_mesh`].
    pub fn new_unchecked(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        Mesh { vertices, faces }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same topology, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::VertexCountMismatch {
                context: "replacement positions".into(),
                expected: self.vertices.len(),
                found: vertices.len(),
            });
        }
        Mesh::new(vertices, self.faces.clone())
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        geom::triangle_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Mean length over unique undirected edges.
    pub fn mean_edge_length(&self) -> f64 {
        let edges = unique_edges(&self.faces);
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| geom::norm(geom::sub(self.vertices[a], self.vertices[b])))
            .sum();
        total / edges.len() as f64
    }

    /// Vertex positions as a V×3 matrix.
    pub fn positions(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.vertices.len(), 3));
        for (mut row, v) in out.rows_mut().into_iter().zip(&self.vertices) {
            row[0] = v[0];
            row[1] = v[1];
            row[2] = v[2];
        }
        out
    }

    /// Reorders vertices so that new vertex `i` is old vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Mesh {
        assert_eq!(perm.len(), self.vertices.len());
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let vertices = perm.iter().map(|&old| self.vertices[old]).collect();
        let faces = self
            .faces
            .iter()
            .map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]])
            .collect();
        Mesh { vertices, faces }
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&v| t.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.vertices)
    }
}

pub(crate) fn unique_edges(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|f| {
            [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                .into_iter()
                .map(|(a, b)| (a.min(b), a.max(b)))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn centroid(vertices: &[Vec3]) -> Vec3 {
    let n = vertices.len().max(1) as f64;
    let s = vertices.iter().fold([0.0; 3], |acc, &v| geom::add(acc, v));
    geom::scale(s, 1.0 / n)
}

/// Which facial region a mask annotates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskLabel {
    Lip,
    UpperFace,
}

/// A sorted, duplicate-free set of vertex indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexMask {
    indices: Vec<usize>,
    label: MaskLabel,
}

impl VertexMask {
    pub fn new(mut indices: Vec<usize>, label: MaskLabel, num_vertices: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyMask);
        }
        indices.sort_unstable();
        let before = indices.len();
        indices.dedup();
        if indices.len() != before {
            return Err(Error::invalid("mask contains duplicate vertex indices"));
        }
        if let Some(&last) = indices.last() {
            if last >= num_vertices {
                return Err(Error::invalid(format!(
                    "mask index {last} out of range for {num_vertices} vertices"
                )));
            }
        }
        Ok(VertexMask { indices, label })
    }

    /// Every vertex of a mesh with `n` vertices.
    pub fn full(n: usize, label: MaskLabel) -> Result<Self> {
        VertexMask::new((0..n).collect(), label, n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn label(&self) -> MaskLabel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Mask after the vertex permutation `perm` (new `i` = old `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> VertexMask {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut indices: Vec<usize> = self.indices.iter().map(|&i| inverse[i]).collect();
        indices.sort_unstable();
        VertexMask {
            indices,
            label: self.label,
        }
    }
}

/// Topology diagnostics. Boundaries and holes are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MeshReport {
    pub vertices: usize,
    pub faces: usize,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
    pub components: usize,
    pub degenerate_faces: usize,
}

impl std::fmt::Display for MeshReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "vertices: {}", self.vertices)?;
        writeln!(f, "faces: {}", self.faces)?;
        writeln!(f, "boundary_edges: {}", self.boundary_edges)?;
        writeln!(f, "non_manifold_edges: {}", self.non_manifold_edges)?;
        writeln!(f, "components: {}", self.components)?;
        write!(f, "degenerate_faces: {}", self.degenerate_faces)
    }
}

pub fn validate_mesh(mesh: &Mesh) -> Result<MeshReport> {
    validate_raw(mesh.vertices(), mesh.faces())
}

/// Counts boundary/non-manifold edges, components and degenerate faces.
/// Only non-finite coordinates are an error.
pub fn validate_raw(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<MeshReport> {
    check_vertices(vertices).map_err(Error::NonFinite)?;
    let n = vertices.len();

    let mut edge_faces: HashMap<(usize, usize), usize> = HashMap::new();
    let mut degenerate = 0;
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for f in faces {
        let in_range = f.iter().all(|&i| i < n);
        let repeated = f[0] == f[1] || f[1] == f[2] || f[0] == f[2];
        if !in_range || repeated {
            degenerate += 1;
            continue;
        }
        if !(geom::triangle_area(vertices[f[0]], vertices[f[1]], vertices[f[2]]) > MIN_TRIANGLE_AREA)
        {
            degenerate += 1;
        }
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *edge_faces.entry((a.min(b), a.max(b))).or_default() += 1;
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }

    let components = (0..n).filter(|&i| find(&mut parent, i) == i).count();
    Ok(MeshReport {
        vertices: n,
        faces: faces.len(),
        boundary_edges: edge_faces.values().filter(|&&c| c == 1).count(),
        non_manifold_edges: edge_faces.values().filter(|&&c| c > 2).count(),
        components,
        degenerate_faces: degenerate,
    })
}

/// Target centroid and RMS radius for [`normalize_to_frame`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationFrame {
    pub centroid: Vec3,
    pub scale: f64,
}

/// `x ↦ scale·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        scale: 1.0,
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        geom::add(geom::scale(p, self.scale), self.translation)
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let s = 1.0 / self.scale;
        SimilarityTransform {
            scale: s,
            translation: geom::scale(self.translation, -s),
        }
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            translation: self.apply(other.translation),
        }
    }
}

/// Root-mean-square distance of the vertices from their centroid.
pub fn rms_radius(vertices: &[Vec3]) -> f64 {
    let c = centroid(vertices);
    let n = vertices.len().max(1) as f64;
    (vertices
        .iter()
        .map(|&v| geom::norm_sq(geom::sub(v, c)))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Translates and uniformly scales a mesh so its centroid and RMS radius
/// match `frame`. Rotation is left to the caller.
pub fn normalize_to_frame(
    mesh: &Mesh,
    frame: &NormalizationFrame,
) -> Result<(Mesh, SimilarityTransform)> {
    let c = mesh.centroid();
    let rms = rms_radius(mesh.vertices());
    if !(rms > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let scale = frame.scale / rms;
    let transform = SimilarityTransform {
        scale,
        translation: geom::sub(frame.centroid, geom::scale(c, scale)),
    };
    Ok((mesh.transformed(&transform), transform))
}
