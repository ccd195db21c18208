//! Learned spectral diffusion, spatial-gradient features and the residual
//! block/stack built from them.
//!
//! Feature matrices may hold several frames stacked vertically: rows
//! `b·V .. (b+1)·V` are frame `b`. Spectral and sparse operators act on
//! each `V`-row block independently.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Zip};
use rand_chacha::ChaCha8Rng;

use super::{join, uniform, Linear, ParamTree, Tensor};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::operators::{ComplexCsr, SurfaceOperators};

/// The parts of an operator bundle the network reads, laid out for the
/// per-block products.
#[derive(Debug)]
pub struct SpectralOps {
    num_vertices: usize,
    /// `V × k`
    phi: Array2<f64>,
    /// `M Φ`, `V × k`
    mass_phi: Array2<f64>,
    lambda: Vec<f64>,
    gradient: ComplexCsr,
}

impl SpectralOps {
    pub fn new(ops: &SurfaceOperators) -> Arc<Self> {
        let mut mass_phi = ops.eigenvectors.clone();
        for (mut row, &m) in mass_phi.rows_mut().into_iter().zip(&ops.mass) {
            row *= m;
        }
        Arc::new(SpectralOps {
            num_vertices: ops.num_vertices(),
            phi: ops.eigenvectors.clone(),
            mass_phi,
            lambda: ops.eigenvalues.clone(),
            gradient: ops.gradient.clone(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    fn blocks(&self, rows: usize) -> usize {
        assert!(
            rows % self.num_vertices == 0,
            "feature rows {rows} not a multiple of V = {}",
            self.num_vertices
        );
        rows / self.num_vertices
    }

    fn decay(&self, t: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((self.k(), t.len()), |(i, j)| (-self.lambda[i] * t[j]).exp())
    }
}

/// `(n·V) × c` frame blocks side by side as `V × (n·c)`.
fn to_wide(x: ArrayView2<f64>, v: usize) -> Array2<f64> {
    let (rows, c) = x.dim();
    let n = rows / v;
    let mut out = Array2::zeros((v, n * c));
    for b in 0..n {
        out.slice_mut(s![.., b * c..(b + 1) * c])
            .assign(&x.slice(s![b * v..(b + 1) * v, ..]));
    }
    out
}

fn from_wide(x: ArrayView2<f64>, c: usize) -> Array2<f64> {
    let (v, w) = x.dim();
    let n = w / c;
    let mut out = Array2::zeros((n * v, c));
    for b in 0..n {
        out.slice_mut(s![b * v..(b + 1) * v, ..])
            .assign(&x.slice(s![.., b * c..(b + 1) * c]));
    }
    out
}

/// Spectral coefficients `Φᵀ M H` of every frame block, `k × (n·c)`.
fn project(h: ArrayView2<f64>, ops: &SpectralOps) -> Array2<f64> {
    ops.blocks(h.nrows());
    ops.mass_phi.t().dot(&to_wide(h, ops.num_vertices))
}

fn scale_blocks(coef: &mut Array2<f64>, decay: &Array2<f64>) {
    let c = decay.ncols();
    for b in 0..coef.ncols() / c {
        let mut blk = coef.slice_mut(s![.., b * c..(b + 1) * c]);
        blk *= decay;
    }
}

fn diffuse_kernel(h: ArrayView2<f64>, t: &[f64], ops: &SpectralOps) -> (Array2<f64>, Array2<f64>) {
    let coef = project(h, ops);
    let mut scaled = coef.clone();
    scale_blocks(&mut scaled, &ops.decay(t));
    (from_wide(ops.phi.dot(&scaled).view(), h.ncols()), coef)
}

/// Heat diffusion for a learned time per channel:
/// `Φ diag(exp(−λ t_j)) Φᵀ M H_j`.
pub fn diffuse(h: ArrayView2<f64>, ops: &SpectralOps, t: &[f64]) -> Result<Array2<f64>> {
    if t.len() != h.ncols() {
        return Err(Error::shape(format!(
            "{} diffusion times for {} channels",
            t.len(),
            h.ncols()
        )));
    }
    if let Some(j) = t.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("diffusion time of channel {j}")));
    }
    if h.nrows() % ops.num_vertices != 0 {
        return Err(Error::shape(format!(
            "{} feature rows for {} vertices",
            h.nrows(),
            ops.num_vertices
        )));
    }
    Ok(diffuse_kernel(h, t, ops).0)
}

/// Taped diffusion; `t` is a `1 × c` row.
pub fn diffuse_var(g: &Graph, h: Var, t: Var, ops: &Arc<SpectralOps>) -> Var {
    let tv = g.value(t);
    let (value, coef) = diffuse_kernel(g.value(h).view(), tv.as_slice().unwrap(), ops);
    let ops = ops.clone();
    g.custom(
        &[h, t],
        value,
        Box::new(move |c| {
            let (hv, tv, gout) = (c.inputs[0], c.inputs[1], c.grad);
            let decay = ops.decay(tv.as_slice().unwrap());
            let ch = hv.ncols();
            let proj = ops.phi.t().dot(&to_wide(gout.view(), ops.num_vertices));
            let gh = c.needs[0].then(|| {
                let mut p = proj.clone();
                scale_blocks(&mut p, &decay);
                from_wide(ops.mass_phi.dot(&p).view(), ch)
            });
            let gt = c.needs[1].then(|| {
                let mut gt = Array2::zeros(tv.dim());
                for b in 0..proj.ncols() / ch {
                    for (i, &lam) in ops.lambda.iter().enumerate() {
                        for j in 0..ch {
                            let col = b * ch + j;
                            gt[[0, j]] -= proj[[i, col]] * coef[[i, col]] * lam * decay[[i, j]];
                        }
                    }
                }
                gt
            });
            vec![gh, gt]
        }),
    )
}

fn gradient_kernel(u: ArrayView2<f64>, ops: &SpectralOps) -> (Array2<f64>, Array2<f64>) {
    let n = ops.blocks(u.nrows());
    let v = ops.num_vertices;
    let mut gr = Array2::zeros(u.dim());
    let mut gi = Array2::zeros(u.dim());
    for b in 0..n {
        let rows = s![b * v..(b + 1) * v, ..];
        ops.gradient.re.mul_dense_into(u.slice(rows), gr.slice_mut(rows));
        ops.gradient.im.mul_dense_into(u.slice(rows), gi.slice_mut(rows));
    }
    (gr, gi)
}

/// `(Re(gA), Im(gA))` for complex `g = gr + i·gi` and `A = ar + i·ai`.
fn complex_mix(gr: &Array2<f64>, gi: &Array2<f64>, ar: &Array2<f64>, ai: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    (gr.dot(ar) - gi.dot(ai), gr.dot(ai) + gi.dot(ar))
}

fn gradient_features_kernel(u: ArrayView2<f64>, ar: &Array2<f64>, ai: &Array2<f64>, ops: &SpectralOps) -> Array2<f64> {
    let (gr, gi) = gradient_kernel(u, ops);
    let (br, bi) = complex_mix(&gr, &gi, ar, ai);
    let mut out = &gr * &br;
    Zip::from(&mut out).and(&gi).and(&bi).for_each(|o, &x, &y| *o = (*o + x * y).tanh());
    out
}

/// `tanh(Re(conj(g) ∘ (g A)))` where `g` is the per-vertex complex gradient
/// of each channel.
pub fn gradient_features(
    u: ArrayView2<f64>,
    ops: &SpectralOps,
    a_re: &Array2<f64>,
    a_im: &Array2<f64>,
) -> Result<Array2<f64>> {
    let c = u.ncols();
    if a_re.dim() != (c, c) || a_im.dim() != (c, c) {
        return Err(Error::shape(format!("gradient mix must be {c}x{c}")));
    }
    if u.nrows() % ops.num_vertices != 0 {
        return Err(Error::shape(format!(
            "{} feature rows for {} vertices",
            u.nrows(),
            ops.num_vertices
        )));
    }
    Ok(gradient_features_kernel(u, a_re, a_im, ops))
}

/// Taped gradient features.
pub fn gradient_features_var(g: &Graph, u: Var, a_re: Var, a_im: Var, ops: &Arc<SpectralOps>) -> Var {
    let value = gradient_features_kernel(g.value(u).view(), &g.value(a_re), &g.value(a_im), ops);
    let ops = ops.clone();
    g.custom(
        &[u, a_re, a_im],
        value,
        Box::new(move |c| {
            let (u, ar, ai) = (c.inputs[0], c.inputs[1], c.inputs[2]);
            let (gr, gi) = gradient_kernel(u.view(), &ops);
            let (br, bi) = complex_mix(&gr, &gi, ar, ai);
            let mut d = c.grad.clone();
            Zip::from(&mut d).and(c.output).for_each(|d, &y| *d *= 1.0 - y * y);
            let pr = &d * &gr;
            let pi = &d * &gi;
            let g_ar = c.needs[1].then(|| gr.t().dot(&pr) + gi.t().dot(&pi));
            let g_ai = c.needs[2].then(|| gr.t().dot(&pi) - gi.t().dot(&pr));
            let g_u = c.needs[0].then(|| {
                let ggr = &d * &br + pr.dot(&ar.t()) + pi.dot(&ai.t());
                let ggi = &d * &bi - pr.dot(&ai.t()) + pi.dot(&ar.t());
                let v = ops.num_vertices;
                let mut gu = Array2::zeros(u.dim());
                for b in 0..ops.blocks(u.nrows()) {
                    let rows = s![b * v..(b + 1) * v, ..];
                    ops.gradient.re.transpose_mul_dense_add(ggr.slice(rows), gu.slice_mut(rows));
                    ops.gradient.im.transpose_mul_dense_add(ggi.slice(rows), gu.slice_mut(rows));
                }
                gu
            });
            vec![g_u, g_ar, g_ai]
        }),
    )
}

/// One residual diffusion block of width `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionBlock<T> {
    /// Square roots of the per-channel diffusion times, `1 × c`.
    pub time_sqrt: T,
    pub mix_re: T,
    pub mix_im: T,
    /// `3c → c` on `[H, u, z]`.
    pub mlp_hidden: Linear<T>,
    pub mlp_out: Linear<T>,
}

impl<T> ParamTree<T> for DiffusionBlock<T> {
    type Mapped<U> = DiffusionBlock<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> DiffusionBlock<U> {
        DiffusionBlock {
            time_sqrt: f(&join(prefix, "time_sqrt"), &self.time_sqrt),
            mix_re: f(&join(prefix, "mix_re"), &self.mix_re),
            mix_im: f(&join(prefix, "mix_im"), &self.mix_im),
            mlp_hidden: self.mlp_hidden.map_named(&join(prefix, "mlp_hidden"), f),
            mlp_out: self.mlp_out.map_named(&join(prefix, "mlp_out"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "time_sqrt"), &mut self.time_sqrt);
        f(&join(prefix, "mix_re"), &mut self.mix_re);
        f(&join(prefix, "mix_im"), &mut self.mix_im);
        self.mlp_hidden.for_each_mut(&join(prefix, "mlp_hidden"), f);
        self.mlp_out.for_each_mut(&join(prefix, "mlp_out"), f);
    }
}

impl DiffusionBlock<Tensor> {
    /// Diffusion times start at `edge_length²`.
    pub fn init(c: usize, edge_length: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (c as f64).sqrt();
        DiffusionBlock {
            time_sqrt: Array2::from_elem((1, c), edge_length),
            mix_re: uniform((c, c), bound, rng),
            mix_im: uniform((c, c), bound, rng),
            mlp_hidden: Linear::init(3 * c, c, rng),
            mlp_out: Linear::init(c, c, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.mix_re.nrows()
    }

    pub fn diffusion_times(&self) -> Vec<f64> {
        self.time_sqrt.iter().map(|s| s * s).collect()
    }
}

impl DiffusionBlock<Var> {
    pub fn forward(&self, g: &Graph, h: Var, ops: &Arc<SpectralOps>) -> Var {
        let c = g.shape(h).1;
        let t = g.square(self.time_sqrt);
        let u = diffuse_var(g, h, t, ops);
        let z = gradient_features_var(g, u, self.mix_re, self.mix_im, ops);
        // [H, u, z] · W as three partial products, avoiding the concat.
        let w = self.mlp_hidden.weight;
        let hidden = g.add(
            g.add(
                g.matmul(h, g.slice_rows(w, 0..c)),
                g.matmul(u, g.slice_rows(w, c..2 * c)),
            ),
            g.linear(z, g.slice_rows(w, 2 * c..3 * c), self.mlp_hidden.bias),
        );
        let y = self.mlp_out.forward(g, g.relu(hidden));
        g.add(h, y)
    }
}

/// Input linear, residual diffusion blocks, output linear.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionStack<T> {
    pub input: Linear<T>,
    pub blocks: Vec<DiffusionBlock<T>>,
    pub output: Linear<T>,
}

impl<T> ParamTree<T> for DiffusionStack<T> {
    type Mapped<U> = DiffusionStack<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> DiffusionStack<U> {
        DiffusionStack {
            input: self.input.map_named(&join(prefix, "input"), f),
            blocks: self.blocks.map_named(&join(prefix, "block"), f),
            output: self.output.map_named(&join(prefix, "output"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.input.for_each_mut(&join(prefix, "input"), f);
        self.blocks.for_each_mut(&join(prefix, "block"), f);
        self.output.for_each_mut(&join(prefix, "output"), f);
    }
}

impl DiffusionStack<Tensor> {
    pub fn init(
        input: usize,
        width: usize,
        output: usize,
        blocks: usize,
        edge_length: f64,
        zero_output: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input = Linear::init(input, width, rng);
        let blocks = (0..blocks)
            .map(|_| DiffusionBlock::init(width, edge_length, rng))
            .collect();
        let output = if zero_output {
            Linear::zeros(width, output)
        } else {
            Linear::init(width, output, rng)
        };
        DiffusionStack {
            input,
            blocks,
            output,
        }
    }
}

impl DiffusionStack<Var> {
    /// Runs the blocks and output layer on an already-projected input.
    pub fn forward_from_hidden(&self, g: &Graph, mut h: Var, ops: &Arc<SpectralOps>) -> Var {
        for b in &self.blocks {
            h = b.forward(g, h, ops);
        }
        self.output.forward(g, h)
    }

    pub fn forward(&self, g: &Graph, x: Var, ops: &Arc<SpectralOps>) -> Var {
        let h = self.input.forward(g, x);
        self.forward_from_hidden(g, h, ops)
    }
}
