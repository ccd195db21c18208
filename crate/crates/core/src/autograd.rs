//! A small reverse-mode automatic differentiation tape over dense 2-D
//! arrays.
//!
//! Every value is an `Array2<f64>`; scalars are `1 × 1`. Operations append
//! nodes to a [`Graph`] and return [`Var`] handles. Network layers with
//! closed-form adjoints (spectral diffusion, gradient features) plug in as
//! custom nodes through [`Graph::custom`].

use std::cell::RefCell;
use std::ops::Range;
use std::rc::Rc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs handed to a node's adjoint.
pub struct Adjoint<'a> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Array2<f64>,
    pub inputs: &'a [&'a Array2<f64>],
    pub output: &'a Array2<f64>,
    /// Whether each input needs a gradient.
    pub needs: &'a [bool],
}

/// Returns one optional gradient per input.
pub type BackwardFn = Box<dyn Fn(&Adjoint) -> Vec<Option<Array2<f64>>>>;

struct Node {
    value: Rc<Array2<f64>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// The tape. Gradient recording can be disabled for inference.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

/// Gradients from [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn sum_rows(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: true,
        }
    }

    /// A graph that never records adjoints.
    pub fn inference() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, parents: Vec<Var>, backward: Option<BackwardFn>, leaf_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.record
            && (leaf_grad || parents.iter().any(|p| nodes[p.0].requires_grad));
        let backward = if requires_grad { backward } else { None };
        let parents = if backward.is_some() { parents } else { Vec::new() };
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// A trainable input.
    pub fn param(&self, value: Array2<f64>) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// A constant input.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> Rc<Array2<f64>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Appends a node computed outside the tape with its own adjoint.
    pub fn custom(&self, parents: &[Var], value: Array2<f64>, backward: BackwardFn) -> Var {
        self.push(value, parents.to_vec(), Some(backward), false)
    }

    /// Reverse sweep from a scalar (or any-shaped, seeded with ones) output.
    pub fn backward(&self, output: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones(nodes[output.0].value.dim()));
        for i in (0..=output.0).rev() {
            let node = &nodes[i];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Array2<f64>> =
                node.parents.iter().map(|p| &*nodes[p.0].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|p| nodes[p.0].requires_grad).collect();
            let pg = bw(&Adjoint {
                grad: &g,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(pg.len(), node.parents.len());
            for ((p, gp), &need) in node.parents.iter().zip(pg).zip(&needs) {
                let (Some(gp), true) = (gp, need) else { continue };
                debug_assert_eq!(gp.dim(), nodes[p.0].value.dim(), "gradient shape at node {i}");
                match &mut grads[p.0] {
                    Some(acc) => *acc += &gp,
                    slot => *slot = Some(gp),
                }
            }
        }
        Gradients { grads }
    }

    // ---- algebra -------------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&*self.value(b));
        self.custom(
            &[a, b],
            value,
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.dot(&c.inputs[1].t())),
                    c.needs[1].then(|| c.inputs[0].t().dot(c.grad)),
                ]
            }),
        )
    }

    /// `x · w + b` with `b` a `1 × n` row broadcast over rows.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let mut value = self.value(x).dot(&*self.value(w));
        value += &*self.value(b);
        self.custom(
            &[x, w, b],
            value,
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.dot(&c.inputs[1].t())),
                    c.needs[1].then(|| c.inputs[0].t().dot(c.grad)),
                    c.needs[2].then(|| sum_rows(c.grad)),
                ]
            }),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) + &*self.value(b);
        self.custom(
            &[a, b],
            value,
            Box::new(|c| vec![c.needs[0].then(|| c.grad.clone()), c.needs[1].then(|| c.grad.clone())]),
        )
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let value = &*self.value(a) + &*self.value(row);
        self.custom(
            &[a, row],
            value,
            Box::new(|c| vec![c.needs[0].then(|| c.grad.clone()), c.needs[1].then(|| sum_rows(c.grad))]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) - &*self.value(b);
        self.custom(
            &[a, b],
            value,
            Box::new(|c| vec![c.needs[0].then(|| c.grad.clone()), c.needs[1].then(|| -c.grad)]),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) * &*self.value(b);
        self.custom(
            &[a, b],
            value,
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad * c.inputs[1]),
                    c.needs[1].then(|| c.grad * c.inputs[0]),
                ]
            }),
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let value = &*self.value(a) * s;
        self.custom(&[a], value, Box::new(move |c| vec![Some(c.grad * s)]))
    }

    /// `1 − a`.
    pub fn one_minus(&self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 - x);
        self.custom(&[a], value, Box::new(|c| vec![Some(-c.grad)]))
    }

    pub fn square(&self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.custom(
            &[a],
            value,
            Box::new(|c| {
                let mut g = c.grad * c.inputs[0];
                g *= 2.0;
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.custom(
            &[a],
            value,
            Box::new(|c| {
                let mut g = c.grad.clone();
                Zip::from(&mut g).and(c.inputs[0]).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g = 0.0
                    }
                });
                vec![Some(g)]
            }),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.custom(
            &[a],
            value,
            Box::new(|c| {
                let mut g = c.grad.clone();
                Zip::from(&mut g).and(c.output).for_each(|g, &y| *g *= 1.0 - y * y);
                vec![Some(g)]
            }),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.custom(
            &[a],
            value,
            Box::new(|c| {
                let mut g = c.grad.clone();
                Zip::from(&mut g).and(c.output).for_each(|g, &y| *g *= y * (1.0 - y));
                vec![Some(g)]
            }),
        )
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.custom(
            &[a],
            value,
            Box::new(|c| vec![Some(Array2::from_elem(c.inputs[0].dim(), c.grad[[0, 0]]))]),
        )
    }

    // ---- shape ---------------------------------------------------------

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let values: Vec<Rc<Array2<f64>>> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<ArrayView2<f64>> = values.iter().map(|v| v.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let widths: Vec<usize> = values.iter().map(|v| v.ncols()).collect();
        self.custom(
            parts,
            value,
            Box::new(move |c| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(c.needs)
                    .map(|(&w, &need)| {
                        let g = need.then(|| c.grad.slice(s![.., start..start + w]).to_owned());
                        start += w;
                        g
                    })
                    .collect()
            }),
        )
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let values: Vec<Rc<Array2<f64>>> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<ArrayView2<f64>> = values.iter().map(|v| v.view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let heights: Vec<usize> = values.iter().map(|v| v.nrows()).collect();
        self.custom(
            parts,
            value,
            Box::new(move |c| {
                let mut start = 0;
                heights
                    .iter()
                    .zip(c.needs)
                    .map(|(&h, &need)| {
                        let g = need.then(|| c.grad.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                        g
                    })
                    .collect()
            }),
        )
    }

    pub fn slice_cols(&self, a: Var, r: Range<usize>) -> Var {
        let value = self.value(a).slice(s![.., r.clone()]).to_owned();
        self.custom(
            &[a],
            value,
            Box::new(move |c| {
                let mut g = Array2::zeros(c.inputs[0].dim());
                g.slice_mut(s![.., r.clone()]).assign(c.grad);
                vec![Some(g)]
            }),
        )
    }

    pub fn slice_rows(&self, a: Var, r: Range<usize>) -> Var {
        let value = self.value(a).slice(s![r.clone(), ..]).to_owned();
        self.custom(
            &[a],
            value,
            Box::new(move |c| {
                let mut g = Array2::zeros(c.inputs[0].dim());
                g.slice_mut(s![r.clone(), ..]).assign(c.grad);
                vec![Some(g)]
            }),
        )
    }

    /// Rows of `a` at `idx` (repeats allowed).
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), idx);
        let idx = idx.to_vec();
        self.custom(
            &[a],
            value,
            Box::new(move |c| {
                let mut g = Array2::zeros(c.inputs[0].dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = g.row_mut(i);
                    row += &c.grad.row(r);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Stacks `n` copies of the whole block `a` vertically.
    pub fn tile_rows(&self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        let views = vec![av.view(); n];
        let value = ndarray::concatenate(Axis(0), &views).expect("tile_rows");
        self.custom(
            &[a],
            value,
            Box::new(move |c| {
                let h = c.inputs[0].nrows();
                let mut g = Array2::zeros(c.inputs[0].dim());
                for b in 0..n {
                    g += &c.grad.slice(s![b * h..(b + 1) * h, ..]);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Repeats each row of `a` `n` times consecutively.
    pub fn repeat_rows(&self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        let (r, cols) = av.dim();
        let mut value = Array2::zeros((r * n, cols));
        for i in 0..r {
            value.slice_mut(s![i * n..(i + 1) * n, ..]).assign(&av.row(i).insert_axis(Axis(0)));
        }
        self.custom(
            &[a],
            value,
            Box::new(move |c| {
                let mut g = Array2::zeros(c.inputs[0].dim());
                for i in 0..g.nrows() {
                    let block = c.grad.slice(s![i * n..(i + 1) * n, ..]);
                    g.row_mut(i).assign(&block.sum_axis(Axis(0)));
                }
                vec![Some(g)]
            }),
        )
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central finite difference of `f` at `x`, entry by entry.
    fn numeric_grad(x: &Array2<f64>, f: &dyn Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let eps = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            let mut p = x.clone();
            p[[i, j]] += eps;
            let mut m = x.clone();
            m[[i, j]] -= eps;
            g[[i, j]] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        g
    }

    fn check(x0: Array2<f64>, build: impl Fn(&Graph, Var) -> Var) {
        let g = Graph::new();
        let x = g.param(x0.clone());
        let y = build(&g, x);
        let s = g.sum(y);
        let analytic = g.backward(s).get(x).unwrap().clone();
        let numeric = numeric_grad(&x0, &|xv| {
            let g = Graph::new();
            let x = g.param(xv.clone());
            let y = build(&g, x);
            g.value(y).sum()
        });
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    fn sample() -> Array2<f64> {
        array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5]]
    }

    #[test]
    fn elementwise_ops() {
        check(sample(), |g, x| g.tanh(x));
        check(sample(), |g, x| g.sigmoid(x));
        check(sample(), |g, x| g.relu(x));
        check(sample(), |g, x| g.square(x));
        check(sample(), |g, x| g.one_minus(g.scale(x, 3.0)));
        check(sample(), |g, x| g.mul(x, g.tanh(x)));
        check(sample(), |g, x| g.sub(g.square(x), x));
    }

    #[test]
    fn matrix_ops() {
        let w = array![[0.5, -0.1], [0.2, 0.3], [-0.7, 0.9]];
        check(sample(), |g, x| {
            let wv = g.constant(w.clone());
            g.square(g.matmul(x, wv))
        });
        check(w.clone(), |g, wv| {
            let x = g.constant(sample());
            let b = g.constant(array![[0.1, -0.2]]);
            g.tanh(g.linear(x, wv, b))
        });
        check(array![[0.1, -0.2]], |g, b| {
            let x = g.constant(sample());
            let wv = g.constant(w.clone());
            g.square(g.linear(x, wv, b))
        });
        check(array![[0.1, -0.2, 0.3]], |g, r| g.square(g.add_row(g.constant(sample()), r)));
    }

    #[test]
    fn shape_ops() {
        check(sample(), |g, x| {
            let a = g.slice_cols(x, 1..3);
            let b = g.slice_rows(x, 0..1);
            let c = g.concat_cols(&[a, g.tanh(a)]);
            let d = g.concat_rows(&[b, g.square(b)]);
            let e = g.sum(g.square(c));
            let f = g.sum(g.tanh(d));
            g.add(e, f)
        });
        check(sample(), |g, x| g.square(g.tile_rows(g.tanh(x), 3)));
        check(sample(), |g, x| g.square(g.repeat_rows(g.tanh(x), 3)));
        check(sample(), |g, x| g.square(g.gather_rows(x, &[1, 1, 0])));
    }

    #[test]
    fn tile_and_repeat_layouts() {
        let g = Graph::new();
        let a = g.constant(array![[1.0], [2.0]]);
        assert_eq!(*g.value(g.tile_rows(a, 2)), array![[1.0], [2.0], [1.0], [2.0]]);
        assert_eq!(*g.value(g.repeat_rows(a, 2)), array![[1.0], [1.0], [2.0], [2.0]]);
    }

    #[test]
    fn constants_and_inference_get_no_gradient() {
        let g = Graph::new();
        let c = g.constant(sample());
        let p = g.param(sample());
        let y = g.sum(g.mul(c, p));
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &sample());

        let g = Graph::inference();
        let p = g.param(sample());
        let y = g.sum(g.tanh(p));
        assert!(!g.requires_grad(y));
        assert!(g.backward(y).get(p).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        let g = Graph::new();
        let x = g.param(array![[2.0]]);
        let y = g.add(g.mul(x, x), x);
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 5.0);
    }
}
