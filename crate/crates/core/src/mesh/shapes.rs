//! Procedural meshes used by the synthetic harness, tests and benches.

use std::collections::HashMap;

use super::Mesh;
use crate::geom::{self, Vec3};

/// Regular icosahedron with the given circumradius, faces wound outward.
pub fn icosahedron(radius: f64) -> Mesh {
    let (vertices, faces) = icosahedron_raw();
    let vertices = vertices
        .into_iter()
        .map(|v| geom::scale(geom::normalize(v), radius))
        .collect();
    Mesh::new_unchecked(vertices, faces)
}

fn icosahedron_raw() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let vertices = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces)
}

/// Icosphere after `subdivisions` rounds of 4-to-1 midpoint splitting.
/// Vertex count is `10·4^s + 2` (12, 42, 162, 642, 2562, 10242, …).
pub fn icosphere(subdivisions: u32, radius: f64) -> Mesh {
    let (mut vertices, mut faces) = icosahedron_raw();
    for v in vertices.iter_mut() {
        *v = geom::normalize(*v);
    }
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    let m = geom::normalize(geom::scale(geom::add(vertices[a], vertices[b]), 0.5));
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| geom::scale(v, radius)).collect();
    Mesh::new_unchecked(vertices, faces)
}

/// Latitude/longitude sphere with poles: `segments` around, `rings` bands.
pub fn uv_sphere(segments: usize, rings: usize, radius: f64) -> Mesh {
    assert!(segments >= 3 && rings >= 2);
    let mut vertices = vec![[0.0, 0.0, radius]];
    for i in 1..rings {
        let theta = std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
            vertices.push([
                radius * theta.sin() * phi.cos(),
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
            ]);
        }
    }
    vertices.push([0.0, 0.0, -radius]);
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * segments + (j % segments);

    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for j in 0..segments {
        faces.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    Mesh::new_unchecked(vertices, faces)
}

/// Planar grid in the xy-plane with `nx × ny` cells of the given spacing,
/// centered at the origin. Vertex `(i, j)` has index `j·(nx+1) + i`.
pub fn grid(nx: usize, ny: usize, spacing: f64) -> Mesh {
    let x0 = -(nx as f64) * spacing / 2.0;
    let y0 = -(ny as f64) * spacing / 2.0;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([x0 + i as f64 * spacing, y0 + j as f64 * spacing, 0.0]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh::new_unchecked(vertices, faces)
}

/// Flat unit-radius disk in the xy-plane (open boundary).
pub fn disk(rings: usize, segments: usize) -> Mesh {
    assert!(rings >= 1 && segments >= 3);
    let mut vertices = vec![[0.0, 0.0, 0.0]];
    for r in 1..=rings {
        let rad = r as f64 / rings as f64;
        for s in 0..segments {
            // Stagger alternate rings to avoid right angles everywhere.
            let phi = 2.0 * std::f64::consts::PI * (s as f64 + 0.5 * (r % 2) as f64)
                / segments as f64;
            vertices.push([rad * phi.cos(), rad * phi.sin(), 0.0]);
        }
    }
    let at = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, at(1, s), at(1, s + 1)]);
    }
    for r in 1..rings {
        for s in 0..segments {
            let (a, b) = (at(r, s), at(r, s + 1));
            let (c, d) = (at(r + 1, s), at(r + 1, s + 1));
            if r % 2 == 1 {
                faces.push([a, c, d]);
                faces.push([a, d, b]);
            } else {
                faces.push([a, c, b]);
                faces.push([b, c, d]);
            }
        }
    }
    Mesh::new_unchecked(vertices, faces)
}

/// Applies `f` to every vertex position, keeping topology.
pub fn deformed(mesh: &Mesh, f: impl Fn(Vec3) -> Vec3) -> Mesh {
    Mesh::new_unchecked(
        mesh.vertices().iter().map(|&v| f(v)).collect(),
        mesh.faces().to_vec(),
    )
}

/// Keeps the faces whose three vertices satisfy `keep`, dropping vertices
/// no remaining face references. Vertex order is otherwise preserved.
pub fn crop(mesh: &Mesh, keep: impl Fn(Vec3) -> bool) -> Mesh {
    let faces: Vec<[usize; 3]> = mesh
        .faces()
        .iter()
        .filter(|f| f.iter().all(|&i| keep(mesh.vertices()[i])))
        .copied()
        .collect();
    let mut remap = vec![usize::MAX; mesh.num_vertices()];
    for f in &faces {
        for &i in f {
            remap[i] = 0;
        }
    }
    let mut vertices = Vec::new();
    for (i, r) in remap.iter_mut().enumerate() {
        if *r == 0 {
            *r = vertices.len();
            vertices.push(mesh.vertices()[i]);
        }
    }
    let faces = faces.into_iter().map(|f| f.map(|i| remap[i])).collect();
    Mesh::new_unchecked(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::validate_mesh;

    fn assert_outward_closed(m: &Mesh) {
        Mesh::new(m.vertices().to_vec(), m.faces().to_vec()).expect("valid");
        let r = validate_mesh(m).unwrap();
        assert_eq!(r.boundary_edges, 0);
        assert_eq!(r.non_manifold_edges, 0);
        assert_eq!(r.components, 1);
        for f in m.faces() {
            let [a, b, c] = f.map(|i| m.vertices()[i]);
            let n = geom::cross(geom::sub(b, a), geom::sub(c, a));
            let centre = geom::scale(geom::add(geom::add(a, b), c), 1.0 / 3.0);
            assert!(geom::dot(n, centre) > 0.0, "face {f:?} wound inward");
        }
    }

    #[test]
    fn icosphere_counts_and_orientation() {
        for (s, v) in [(0, 12), (1, 42), (2, 162), (3, 642)] {
            let m = icosphere(s, 1.0);
            assert_eq!(m.num_vertices(), v);
            assert_eq!(m.num_faces(), 2 * v - 4);
            assert_outward_closed(&m);
        }
    }

    #[test]
    fn uv_sphere_is_closed_and_outward() {
        assert_outward_closed(&uv_sphere(16, 10, 1.0));
    }

    #[test]
    fn grid_and_disk_are_valid_open_surfaces() {
        let g = grid(4, 3, 0.5);
        assert_eq!(g.num_vertices(), 20);
        let r = validate_mesh(&g).unwrap();
        assert_eq!(r.boundary_edges, 2 * (4 + 3));
        let d = disk(4, 12);
        Mesh::new(d.vertices().to_vec(), d.faces().to_vec()).unwrap();
        let r = validate_mesh(&d).unwrap();
        assert_eq!(r.boundary_edges, 12);
        assert_eq!(r.non_manifold_edges, 0);
        for f in d.faces() {
            let [a, b, c] = f.map(|i| d.vertices()[i]);
            assert!(geom::cross(geom::sub(b, a), geom::sub(c, a))[2] > 0.0);
        }
    }

    #[test]
    fn crop_opens_a_hole() {
        let m = crop(&icosphere(2, 1.0), |v| v[2] < 0.7);
        Mesh::new(m.vertices().to_vec(), m.faces().to_vec()).expect("valid");
        let r = validate_mesh(&m).unwrap();
        assert!(r.boundary_edges > 0);
        assert!(m.num_vertices() < 162);
        assert!(m.vertices().iter().all(|v| v[2] < 0.7));
    }
}
