//! Per-mesh precomputed operators: lumped mass, cotangent Laplacian, its
//! low-frequency eigenbasis and a per-vertex tangent gradient.

mod cache;

pub use cache::{cache_key, load_cache, read_cache, store_cache, CACHE_VERSION};

use ndarray::{Array2, ArrayView2};

use crate::eigen::{smallest_eigenpairs, EigenOptions};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;

/// Cotangents are clamped to this magnitude.
pub const COT_CLAMP: f64 = 20.0;

/// Default eigenbasis size, clipped to `V − 1`.
pub const DEFAULT_K: usize = 128;

pub fn default_k(num_vertices: usize) -> usize {
    DEFAULT_K.min(num_vertices.saturating_sub(1)).max(1)
}

/// Weak cotangent Laplacian, positive semi-definite convention.
pub fn cotangent_laplacian(mesh: &Mesh) -> Result<CsrMatrix> {
    let v = mesh.vertices();
    let n = v.len();
    let mut trip = Vec::with_capacity(mesh.num_faces() * 12);
    for (fi, f) in mesh.faces().iter().enumerate() {
        for c in 0..3 {
            let (k, i, j) = (f[c], f[(c + 1) % 3], f[(c + 2) % 3]);
            let cot = geom::cotangent(geom::sub(v[i], v[k]), geom::sub(v[j], v[k])).ok_or_else(
                || Error::InvalidMesh {
                    line: None,
                    message: format!("degenerate face {fi} in Laplacian assembly"),
                },
            )?;
            let w = 0.5 * cot.clamp(-COT_CLAMP, COT_CLAMP);
            trip.push((i, j, -w));
            trip.push((j, i, -w));
            trip.push((i, i, w));
            trip.push((j, j, w));
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &trip))
}

/// Lumped barycentric mass: a third of the incident triangle area.
pub fn mass_matrix(mesh: &Mesh) -> Vec<f64> {
    let mut mass = vec![0.0; mesh.num_vertices()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let a = mesh.face_area(fi) / 3.0;
        for &i in f {
            mass[i] += a;
        }
    }
    mass
}

/// Complex sparse matrix stored as two real matrices sharing one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexCsr {
    pub re: CsrMatrix,
    pub im: CsrMatrix,
}

impl ComplexCsr {
    pub fn nrows(&self) -> usize {
        self.re.nrows()
    }

    /// `(re·x, im·x)` for a real block `x`.
    pub fn apply(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        (self.re.mul_dense(x), self.im.mul_dense(x))
    }

    pub fn permuted(&self, perm: &[usize]) -> ComplexCsr {
        ComplexCsr {
            re: self.re.permuted(perm),
            im: self.im.permuted(perm),
        }
    }
}

/// Vertices that needed special handling while building the gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientDiagnostics {
    /// One-ring fit was rank deficient and got a ridge term.
    pub regularized: Vec<usize>,
}

/// Area-weighted vertex normals (unit length; zero if undefined).
pub fn vertex_normals(mesh: &Mesh) -> Vec<Vec3> {
    let v = mesh.vertices();
    let mut normals = vec![[0.0; 3]; v.len()];
    for f in mesh.faces() {
        // |cross| is twice the area, so the sum is area weighted.
        let n = geom::cross(geom::sub(v[f[1]], v[f[0]]), geom::sub(v[f[2]], v[f[0]]));
        for &i in f {
            normals[i] = geom::add(normals[i], n);
        }
    }
    normals.into_iter().map(geom::normalize).collect()
}

/// Tangent frame from a normal: `e₁` is the projection of the coordinate
/// axis least aligned with `n` (first axis on ties), `e₂ = n × e₁`.
pub fn tangent_frame(n: Vec3) -> (Vec3, Vec3) {
    let n = if geom::norm(n) > 0.0 { n } else { [0.0, 0.0, 1.0] };
    let mut axis = 0;
    for a in 1..3 {
        if n[a].abs() < n[axis].abs() {
            axis = a;
        }
    }
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let e1 = geom::normalize(geom::sub(e, geom::scale(n, geom::dot(e, n))));
    (e1, geom::cross(n, e1))
}

/// Sorted one-ring neighbour lists.
pub fn one_rings(mesh: &Mesh) -> Vec<Vec<usize>> {
    let mut rings = vec![Vec::new(); mesh.num_vertices()];
    for f in mesh.faces() {
        for c in 0..3 {
            let (a, b) = (f[c], f[(c + 1) % 3]);
            rings[a].push(b);
            rings[b].push(a);
        }
    }
    for r in rings.iter_mut() {
        r.sort_unstable();
        r.dedup();
    }
    rings
}

/// Least-squares gradient weights `(DᵀD)⁻¹Dᵀ` for projected edge vectors
/// `d`, one `(e₁, e₂)` pair per neighbour. A ridge of `1e-8·trace` is added
/// when the fit is rank deficient; the flag reports that.
pub fn one_ring_weights(d: &[[f64; 2]]) -> (Vec<(f64, f64)>, bool) {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in d {
        a += p[0] * p[0];
        b += p[0] * p[1];
        c += p[1] * p[1];
    }
    let tr = a + c;
    let mut det = a * c - b * b;
    let regularized = !(det > 1e-10 * tr * tr);
    if regularized {
        let ridge = 1e-8 * tr.max(f64::MIN_POSITIVE);
        a += ridge;
        c += ridge;
        det = a * c - b * b;
    }
    let w = d
        .iter()
        .map(|p| ((c * p[0] - b * p[1]) / det, (-b * p[0] + a * p[1]) / det))
        .collect();
    (w, regularized)
}

/// One-ring least-squares gradient: row `i` maps a scalar field to
/// `∂f/∂e₁ + i·∂f/∂e₂` at vertex `i`.
pub fn spatial_gradient(mesh: &Mesh) -> (ComplexCsr, GradientDiagnostics) {
    let v = mesh.vertices();
    let n = v.len();
    let normals = vertex_normals(mesh);
    let rings = one_rings(mesh);
    let mut re = Vec::new();
    let mut im = Vec::new();
    let mut diag = GradientDiagnostics::default();

    for i in 0..n {
        let ring = &rings[i];
        if ring.is_empty() {
            continue;
        }
        let (e1, e2) = tangent_frame(normals[i]);
        let d: Vec<[f64; 2]> = ring
            .iter()
            .map(|&j| {
                let e = geom::sub(v[j], v[i]);
                [geom::dot(e, e1), geom::dot(e, e2)]
            })
            .collect();
        let (weights, regularized) = one_ring_weights(&d);
        if regularized {
            diag.regularized.push(i);
        }
        let (mut sum_re, mut sum_im) = (0.0, 0.0);
        for (&j, &(wr, wi)) in ring.iter().zip(&weights) {
            re.push((i, j, wr));
            im.push((i, j, wi));
            sum_re += wr;
            sum_im += wi;
        }
        re.push((i, i, -sum_re));
        im.push((i, i, -sum_im));
    }
    (
        ComplexCsr {
            re: CsrMatrix::from_triplets(n, n, &re),
            im: CsrMatrix::from_triplets(n, n, &im),
        },
        diag,
    )
}

/// The precomputed operator bundle for one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceOperators {
    pub mass: Vec<f64>,
    pub laplacian: CsrMatrix,
    pub eigenvalues: Vec<f64>,
    /// `V × k`, M-orthonormal columns.
    pub eigenvectors: Array2<f64>,
    pub gradient: ComplexCsr,
    pub diagnostics: GradientDiagnostics,
}

impl SurfaceOperators {
    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The same bundle under a vertex relabelling (new `i` = old `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> SurfaceOperators {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut regularized: Vec<usize> =
            self.diagnostics.regularized.iter().map(|&i| inverse[i]).collect();
        regularized.sort_unstable();
        SurfaceOperators {
            mass: perm.iter().map(|&i| self.mass[i]).collect(),
            laplacian: self.laplacian.permuted(perm),
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: self.eigenvectors.select(ndarray::Axis(0), perm),
            gradient: self.gradient.permuted(perm),
            diagnostics: GradientDiagnostics { regularized },
        }
    }

    /// Checks the bundle's structural invariants and that it matches `v`
    /// vertices.
    pub fn check_shape(&self, v: usize) -> Result<()> {
        let k = self.k();
        if self.num_vertices() != v {
            return Err(Error::VertexCountMismatch {
                context: "operator bundle".into(),
                expected: v,
                found: self.num_vertices(),
            });
        }
        if self.laplacian.nrows() != v
            || self.laplacian.ncols() != v
            || self.eigenvectors.dim() != (v, k)
            || self.gradient.re.nrows() != v
            || self.gradient.im.nrows() != v
        {
            return Err(Error::shape("operator bundle fields disagree on V or k"));
        }
        Ok(())
    }
}

/// Builds the full operator bundle with `k` eigenpairs.
pub fn compute_operators(mesh: &Mesh, k: usize) -> Result<SurfaceOperators> {
    compute_operators_with(mesh, k, &EigenOptions::default())
}

pub fn compute_operators_with(
    mesh: &Mesh,
    k: usize,
    opts: &EigenOptions,
) -> Result<SurfaceOperators> {
    let n = mesh.num_vertices();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "eigenbasis size k = {k} must be in 1..={n} for this mesh"
        )));
    }
    let mass = mass_matrix(mesh);
    if let Some(i) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::ZeroMass { vertex: i });
    }
    let laplacian = cotangent_laplacian(mesh)?;
    let eig = smallest_eigenpairs(&laplacian, &mass, k, opts)?;
    let (gradient, diagnostics) = spatial_gradient(mesh);
    Ok(SurfaceOperators {
        mass,
        laplacian,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        gradient,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    fn equilateral() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 3f64.sqrt() / 2.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn equilateral_triangle_weights() {
        let l = cotangent_laplacian(&equilateral()).unwrap();
        let off = -1.0 / (2.0 * 3f64.sqrt());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 / 3f64.sqrt() } else { off };
                assert!((l.get(i, j) - expect).abs() < 1e-12);
            }
        }
        let m = mass_matrix(&equilateral());
        for x in m {
            assert!((x - 3f64.sqrt() / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_square_weights() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let l = cotangent_laplacian(&m).unwrap();
        for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
            assert!((l.get(i, j) + 0.5).abs() < 1e-12);
        }
        assert!(l.get(0, 2).abs() < 1e-12);
    }

    #[test]
    fn clamps_near_degenerate_cotangents() {
        // Sliver with a tiny angle at vertex 2.
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1e-3, 0.0, 0.0], [0.5, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let l = cotangent_laplacian(&m).unwrap();
        assert!((l.get(0, 1) + 0.5 * COT_CLAMP).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_linear_fields_on_grid() {
        let g = shapes::grid(6, 5, 0.3);
        let (grad, d) = spatial_gradient(&g);
        assert!(d.regularized.is_empty());
        let pos = g.positions();
        let fx = pos.column(0).to_owned().insert_axis(ndarray::Axis(1));
        let (gr, gi) = grad.apply(fx.view());
        for i in 0..g.num_vertices() {
            assert!((gr[[i, 0]] - 1.0).abs() < 1e-6 && gi[[i, 0]].abs() < 1e-6);
        }
        let fxy = (&pos.column(0) + &pos.column(1)).insert_axis(ndarray::Axis(1));
        let (gr, gi) = grad.apply(fxy.view());
        for i in 0..g.num_vertices() {
            let mag = (gr[[i, 0]].powi(2) + gi[[i, 0]].powi(2)).sqrt();
            assert!((mag - 2f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_of_constant_is_zero_and_frame_is_orthonormal() {
        let m = shapes::icosphere(2, 1.0);
        let (grad, _) = spatial_gradient(&m);
        let ones = Array2::ones((m.num_vertices(), 1));
        let (gr, gi) = grad.apply(ones.view());
        assert!(gr.iter().chain(gi.iter()).all(|x| x.abs() < 1e-8));
        for n in vertex_normals(&m) {
            let (e1, e2) = tangent_frame(n);
            assert!(geom::dot(e1, n).abs() < 1e-12 && geom::dot(e1, e2).abs() < 1e-12);
            assert!((geom::norm(e1) - 1.0).abs() < 1e-12 && (geom::norm(e2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_ring_is_regularized() {
        let (w, reg) = one_ring_weights(&[[1.0, 0.0], [-2.0, 0.0], [0.5, 0.0]]);
        assert!(reg);
        assert!(w.iter().all(|(a, b)| a.is_finite() && b.is_finite()));
        // Along the line the fit still recovers the slope of f = 3·x.
        let df: f64 = [1.0, -2.0, 0.5].iter().zip(&w).map(|(x, (wr, _))| 3.0 * x * wr).sum();
        assert!((df - 3.0).abs() < 1e-6);
        let (_, reg) = one_ring_weights(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(!reg);
    }

    #[test]
    fn bundle_errors() {
        let m = shapes::icosahedron(1.0);
        assert!(compute_operators(&m, 13).is_err());
        let mut verts = m.vertices().to_vec();
        verts.push([5.0, 5.0, 5.0]);
        let iso = Mesh::new(verts, m.faces().to_vec()).unwrap();
        assert!(matches!(compute_operators(&iso, 4), Err(Error::ZeroMass { vertex: 12 })));
    }

    #[test]
    fn permuted_bundle_matches_recomputed_operators() {
        let m = shapes::icosphere(1, 1.0);
        let ops = compute_operators(&m, 8).unwrap();
        let perm: Vec<usize> = (0..m.num_vertices()).rev().collect();
        let pm = m.permuted(&perm);
        let p = ops.permuted(&perm);
        let (g2, _) = spatial_gradient(&pm);
        let l2 = cotangent_laplacian(&pm).unwrap();
        let diff = |a: &CsrMatrix, b: &CsrMatrix| {
            (a.to_dense() - b.to_dense()).iter().fold(0.0f64, |x, y| x.max(y.abs()))
        };
        assert!(diff(&p.laplacian, &l2) < 1e-12);
        assert!(diff(&p.gradient.re, &g2.re) < 1e-12);
        assert!(diff(&p.gradient.im, &g2.im) < 1e-12);
        assert_eq!(p.mass, mass_matrix(&pm));
    }
}
