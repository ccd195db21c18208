#![allow(dead_code)]

use talkmesh_core::mesh::Mesh;
use talkmesh_core::sparse::CsrMatrix;

/// Cyclic Jacobi eigendecomposition of a dense symmetric matrix.
/// Returns ascending eigenvalues and eigenvectors as columns.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x][x].total_cmp(&a[y][y]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&c| v[r][c]).collect()).collect();
    (values, vectors)
}

/// Dense generalized eigenvalues of `L φ = λ M φ` with diagonal `M`, via
/// the symmetric reduction `M^{-1/2} L M^{-1/2}`.
pub fn dense_generalized_eigenvalues(l: &CsrMatrix, mass: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let d = l.to_dense();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| d[[i, j]] / (mass[i] * mass[j]).sqrt()).collect())
        .collect();
    jacobi_eigen(&a).0
}

/// Deterministic pseudo-random jitter in `[-1, 1]`.
pub fn hash_unit(i: usize, salt: u64) -> f64 {
    let mut x = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 29;
    (x >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
}

pub fn jitter(mesh: &Mesh, amount: f64, salt: u64) -> Mesh {
    let verts = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            [
                v[0] + amount * hash_unit(3 * i, salt),
                v[1] + amount * hash_unit(3 * i + 1, salt),
                v[2] + amount * hash_unit(3 * i + 2, salt),
            ]
        })
        .collect();
    Mesh::new(verts, mesh.faces().to_vec()).unwrap()
}
