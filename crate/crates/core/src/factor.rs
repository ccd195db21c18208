//! Envelope (skyline) Cholesky factorization with reverse Cuthill–McKee
//! ordering, used for the shift-invert solves of the eigensolver.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Reverse Cuthill–McKee ordering of a structurally symmetric matrix.
/// Returns `perm` with new index `i` = old index `perm[i]`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).0.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let bfs_levels = |start: usize, visited: &[bool]| -> (Vec<usize>, usize) {
        // returns (last level, depth)
        let mut seen = visited.to_vec();
        let mut level = vec![start];
        seen[start] = true;
        let mut depth = 0;
        loop {
            let mut next = Vec::new();
            for &u in &level {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                return (level, depth);
            }
            level = next;
            depth += 1;
        }
    };

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        // Pseudo-peripheral start within the next unvisited component.
        let mut start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        let (mut last, mut depth) = bfs_levels(start, &visited);
        for _ in 0..4 {
            let cand = *last.iter().min_by_key(|&&i| (degree[i], i)).unwrap();
            let (l2, d2) = bfs_levels(cand, &visited);
            if d2 <= depth {
                break;
            }
            start = cand;
            last = l2;
            depth = d2;
        }

        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// `P A Pᵀ = L Lᵀ` stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    rowptr: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors a symmetric positive-definite matrix.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::shape("Cholesky needs a square matrix"));
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (i, &old) in perm.iter().enumerate() {
            for &c in a.row(old).0 {
                let j = inverse[c];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut rowptr = vec![0usize; n + 1];
        for i in 0..n {
            rowptr[i + 1] = rowptr[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; rowptr[n]];
        for (i, &old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inverse[c];
                if j <= i {
                    data[rowptr[i] + j - first[i]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let ri = rowptr[i];
            for j in fi..i {
                let fj = first[j];
                let rj = rowptr[j];
                let start = fi.max(fj);
                let len = j - start;
                let li = &data[ri + start - fi..ri + start - fi + len];
                let lj = &data[rj + start - fj..rj + start - fj + len];
                let s: f64 = li.iter().zip(lj).map(|(x, y)| x * y).sum();
                let diag_j = data[rj + j - fj];
                data[ri + j - fi] = (data[ri + j - fi] - s) / diag_j;
            }
            let row = &data[ri..ri + i - fi];
            let s: f64 = row.iter().map(|x| x * x).sum();
            let d = data[ri + i - fi] - s;
            if !(d > 0.0) {
                return Err(Error::NonFinite(format!(
                    "Cholesky pivot {i} is {d:.3e}; matrix not positive definite"
                )));
            }
            data[ri + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            perm,
            first,
            rowptr,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored entries of the factor.
    pub fn profile(&self) -> usize {
        self.data.len()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let ri = self.rowptr[i];
            let row = &self.data[ri..ri + i - fi];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.data[ri + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let ri = self.rowptr[i];
            y[i] /= self.data[ri + i - fi];
            let xi = y[i];
            let row = &self.data[ri..ri + i - fi];
            for (l, v) in row.iter().zip(&mut y[fi..i]) {
                *v -= l * xi;
            }
        }
        for (i, &old) in self.perm.iter().enumerate() {
            b[old] = y[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path_laplacian_plus(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn rcm_is_a_permutation_and_handles_components() {
        let mut t = vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0)];
        t.extend([(0, 3, 1.0), (3, 0, 1.0)]);
        let a = CsrMatrix::from_triplets(4, 4, &t);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort();
        assert_eq!(p, vec![0, 1, 2, 3]);
    }

    #[test]
    fn solves_random_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        // random sparse symmetric, made diagonally dominant
        let mut t = Vec::new();
        let mut diag = vec![1.0; n];
        for _ in 0..120 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let v: f64 = rng.random_range(-1.0..1.0);
            t.push((i, j, v));
            t.push((j, i, v));
            diag[i] += v.abs();
            diag[j] += v.abs();
        }
        for (i, d) in diag.iter().enumerate() {
            t.push((i, i, *d));
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = a.matvec(&x);
        EnvelopeCholesky::factor(&a).unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = path_laplacian_plus(5, -1.0);
        assert!(EnvelopeCholesky::factor(&a).is_err());
        let a = path_laplacian_plus(5, 0.0);
        assert!(EnvelopeCholesky::factor(&a).is_ok());
    }
}
