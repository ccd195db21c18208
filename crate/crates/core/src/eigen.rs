//! Smallest eigenpairs of the generalized problem `L φ = λ M φ` with `L`
//! sparse symmetric positive semi-definite and `M` positive diagonal.
//!
//! Shift-invert block subspace iteration: each sweep applies
//! `(L − σM)⁻¹ M` to a block of `p > k` vectors, M-orthonormalizes them
//! with two passes of modified Gram–Schmidt, then extracts Ritz pairs from
//! the projected `p × p` problem. The start block is seeded, so results are
//! reproducible bit for bit.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::factor::EnvelopeCholesky;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Relative residual tolerance per pair.
    pub tol: f64,
    /// Defaults to `5·k·√V`.
    pub max_iterations: Option<usize>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            max_iterations: None,
            seed: 0x5eed_e16e,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Ascending, clamped at zero.
    pub values: Vec<f64>,
    /// `V × k`, columns M-orthonormal.
    pub vectors: Array2<f64>,
    pub iterations: usize,
    pub max_residual: f64,
}

/// Backward-error style residual `‖Lφ − λMφ‖ / ((‖L‖∞ + |λ|·max M)·‖φ‖)`.
pub fn relative_residual(l: &CsrMatrix, mass: &[f64], lambda: f64, phi: &[f64]) -> f64 {
    let lphi = l.matvec(phi);
    let r: f64 = lphi
        .iter()
        .zip(mass)
        .zip(phi)
        .map(|((a, m), p)| (a - lambda * m * p).powi(2))
        .sum::<f64>()
        .sqrt();
    let mmax = mass.iter().cloned().fold(0.0, f64::max);
    let pn = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = (l.norm_inf() + lambda.abs() * mmax) * pn;
    if denom > 0.0 {
        r / denom
    } else {
        r
    }
}

fn m_dot(a: &[f64], b: &[f64], mass: &[f64]) -> f64 {
    a.iter().zip(b).zip(mass).map(|((x, y), m)| x * y * m).sum()
}

/// M-orthonormalizes the rows of `block` in place. Rows that collapse are
/// replaced by fresh random vectors.
fn m_orthonormalize(block: &mut Array2<f64>, mass: &[f64], rng: &mut ChaCha8Rng) {
    let p = block.nrows();
    for i in 0..p {
        for attempt in 0..4 {
            let original = m_dot(
                block.row(i).as_slice().unwrap(),
                block.row(i).as_slice().unwrap(),
                mass,
            )
            .sqrt();
            for _pass in 0..2 {
                for j in 0..i {
                    let (done, mut rest) = block.view_mut().split_at(Axis(0), i);
                    let qj = done.row(j);
                    let mut yi = rest.row_mut(0);
                    let r = m_dot(yi.as_slice().unwrap(), qj.as_slice().unwrap(), mass);
                    yi.scaled_add(-r, &qj);
                }
            }
            let nrm = m_dot(
                block.row(i).as_slice().unwrap(),
                block.row(i).as_slice().unwrap(),
                mass,
            )
            .sqrt();
            if nrm > 1e-10 * original && nrm > 0.0 && attempt < 3 {
                block.row_mut(i).mapv_inplace(|x| x / nrm);
                break;
            }
            for x in block.row_mut(i).iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
    }
}

/// The `k` smallest generalized eigenpairs.
pub fn smallest_eigenpairs(
    l: &CsrMatrix,
    mass: &[f64],
    k: usize,
    opts: &EigenOptions,
) -> Result<Eigenpairs> {
    let n = l.nrows();
    if l.ncols() != n || mass.len() != n {
        return Err(Error::shape(format!(
            "eigenproblem dimensions: L is {}x{}, mass has {}",
            l.nrows(),
            l.ncols(),
            mass.len()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    if let Some(i) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::ZeroMass { vertex: i });
    }

    let p = n.min((2 * k).max(k + 8));
    let max_iter = opts
        .max_iterations
        .unwrap_or_else(|| ((5 * k) as f64 * (n as f64).sqrt()).ceil() as usize)
        .max(1);

    // Shift slightly below zero so L − σM is positive definite.
    let spread = (0..n)
        .map(|i| l.get(i, i) / mass[i])
        .fold(0.0, f64::max);
    let sigma = if spread > 0.0 { -1e-6 * spread } else { -1.0 };
    let mut trip = Vec::with_capacity(l.nnz() + n);
    for i in 0..n {
        let (cols, vals) = l.row(i);
        trip.extend(cols.iter().zip(vals).map(|(&c, &v)| (i, c, v)));
        trip.push((i, i, -sigma * mass[i]));
    }
    let shifted = CsrMatrix::from_triplets(n, n, &trip);
    let chol = EnvelopeCholesky::factor(&shifted)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut block = Array2::from_shape_fn((p, n), |_| rng.random_range(-1.0..1.0));
    m_orthonormalize(&mut block, mass, &mut rng);

    let l_inf = l.norm_inf();
    let m_max = mass.iter().cloned().fold(0.0, f64::max);
    let mut worst = f64::INFINITY;
    let mut values = vec![0.0; p];

    for iter in 1..=max_iter {
        // Y = (L − σM)⁻¹ M Q
        for mut row in block.rows_mut() {
            let r = row.as_slice_mut().unwrap();
            for (x, m) in r.iter_mut().zip(mass) {
                *x *= m;
            }
            chol.solve_in_place(r);
        }
        m_orthonormalize(&mut block, mass, &mut rng);

        // Rayleigh–Ritz on the M-orthonormal block.
        let mut ly = Array2::zeros((p, n));
        for (src, mut dst) in block.rows().into_iter().zip(ly.rows_mut()) {
            let v = l.matvec(src.as_slice().unwrap());
            dst.assign(&ndarray::ArrayView1::from(&v));
        }
        let proj = block.dot(&ly.t());
        let sym = DMatrix::from_fn(p, p, |i, j| 0.5 * (proj[[i, j]] + proj[[j, i]]));
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let rot = Array2::from_shape_fn((p, p), |(i, j)| eig.eigenvectors[(j, order[i])]);
        values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        block = rot.dot(&block);
        let lq = rot.dot(&ly);

        worst = 0.0f64;
        for i in 0..k {
            let q = block.row(i);
            let r: f64 = lq
                .row(i)
                .iter()
                .zip(q.iter())
                .zip(mass)
                .map(|((a, x), m)| (a - values[i] * m * x).powi(2))
                .sum::<f64>()
                .sqrt();
            let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = (l_inf + values[i].abs() * m_max) * qn;
            worst = worst.max(if denom > 0.0 { r / denom } else { r });
        }
        if worst <= opts.tol {
            return Ok(finish(block, values, k, iter, worst));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: worst,
    })
}

fn finish(block: Array2<f64>, values: Vec<f64>, k: usize, iterations: usize, worst: f64) -> Eigenpairs {
    let n = block.ncols();
    let mut vectors = Array2::zeros((n, k));
    for i in 0..k {
        let row = block.row(i);
        // Sign convention: the largest-magnitude entry is positive.
        let mut best = 0;
        for (j, x) in row.iter().enumerate() {
            if x.abs() > row[best].abs() {
                best = j;
            }
        }
        let sign = if row[best] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            vectors[[j, i]] = sign * row[j];
        }
    }
    Eigenpairs {
        values: values[..k].iter().map(|&v| v.max(0.0)).collect(),
        vectors,
        iterations,
        max_residual: worst,
    }
}
