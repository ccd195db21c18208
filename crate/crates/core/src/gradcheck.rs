//! Central finite-difference check of taped gradients.

use ndarray::Array2;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ParamTree, Tensor};

/// Per-leaf comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct LeafCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub rel_err: f64,
    /// `max(‖analytic‖, ‖numeric‖)`; near zero means the check says nothing.
    pub scale: f64,
}

impl LeafCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.scale > 1e-10 && self.rel_err < tol
    }
}

/// Compares reverse-mode gradients of a scalar objective with central
/// differences of step `eps`, one leaf element at a time.
pub fn check_gradients<P>(
    params: &P,
    eps: f64,
    objective: &dyn Fn(&Graph, &P::Mapped<Var>) -> Result<Var>,
) -> Result<Vec<LeafCheck>>
where
    P: ParamTree<Tensor> + Clone,
{
    let g = Graph::new();
    let mut vars = Vec::new();
    let bound = params.map_named("", &mut |_, t| {
        let v = g.param(t.clone());
        vars.push(v);
        v
    });
    let out = objective(&g, &bound)?;
    if g.shape(out) != (1, 1) {
        return Err(Error::shape(format!("objective must be 1×1, got {:?}", g.shape(out))));
    }
    let grads = g.backward(out);

    let eval = |p: &P| -> Result<f64> {
        let g = Graph::inference();
        let b = nn::bind(&g, p);
        let out = objective(&g, &b)?;
        Ok(g.value(out)[[0, 0]])
    };
    let leaves = nn::leaf_shapes(params);
    let mut work = params.clone();
    let mut report = Vec::with_capacity(leaves.len());
    for (li, (name, shape)) in leaves.into_iter().enumerate() {
        let mut numeric = Array2::zeros(shape);
        for idx in 0..shape.0 * shape.1 {
            let (i, j) = (idx / shape.1, idx % shape.1);
            let bump = |d: f64, p: &mut P| {
                let mut n = 0;
                p.for_each_mut("", &mut |_, t| {
                    if n == li {
                        t[[i, j]] += d;
                    }
                    n += 1;
                });
            };
            bump(eps, &mut work);
            let fp = eval(&work)?;
            bump(-2.0 * eps, &mut work);
            let fm = eval(&work)?;
            bump(eps, &mut work);
            numeric[[i, j]] = (fp - fm) / (2.0 * eps);
        }
        let analytic = grads.get_or_zeros(vars[li], shape);
        let norm = |a: &Array2<f64>| a.mapv(|x| x * x).sum().sqrt();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel_err = if scale > 0.0 {
            norm(&(&analytic - &numeric)) / scale
        } else {
            0.0
        };
        report.push(LeafCheck {
            name,
            rel_err,
            scale,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn linear_tanh_objective() {
        let p = Linear {
            weight: Array2::from_shape_fn((3, 2), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64 + 0.1),
            bias: Array2::from_elem((1, 2), 0.05),
        };
        let x = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let report = check_gradients(&p, 1e-5, &|g, b| {
            let y = g.tanh(b.forward(g, g.constant(x.clone())));
            Ok(g.sum(g.square(y)))
        })
        .unwrap();
        assert_eq!(report.len(), 2);
        assert!(report.iter().all(|r| r.passes(1e-6)), "{report:?}");
    }
}
