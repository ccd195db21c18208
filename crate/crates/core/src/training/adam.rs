//! Adam with bias correction, plus global-norm clipping.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::{ParamTree, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per leaf, in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<P: ParamTree<Tensor>>(params: &P) -> Self {
        let mut m = Vec::new();
        params.for_each("", &mut |_, t| m.push(Array2::zeros(t.dim())));
        AdamState {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One update; `grads` are in the same leaf order as `params`.
    pub fn update<P: ParamTree<Tensor>>(&mut self, params: &mut P, grads: &[Tensor], cfg: &AdamConfig) {
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match state");
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let mut i = 0;
        params.for_each_mut("", &mut |_, p| {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
                });
            i += 1;
        });
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales `grads` so their joint norm is at most `max_norm`; returns the
/// norm before clipping. `max_norm ≤ 0` disables clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    fn scalar(x: f64) -> Linear<Tensor> {
        Linear {
            weight: Array2::from_elem((1, 1), x),
            bias: Array2::zeros((1, 1)),
        }
    }

    #[test]
    fn single_scalar_first_steps() {
        let cfg = AdamConfig {
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p);
        let g = vec![Array2::from_elem((1, 1), 0.5), Array2::zeros((1, 1))];
        st.update(&mut p, &g, &cfg);
        // m̂ = 0.5, v̂ = 0.25 → step lr·0.5/(0.5 + ε).
        let expect = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p.weight[[0, 0]] - expect).abs() < 1e-15);
        assert_eq!(p.bias[[0, 0]], 0.0);
        // Second step with gradient −0.5: m = 0.09·0.5·… computed by hand.
        let g2 = vec![Array2::from_elem((1, 1), -0.5), Array2::zeros((1, 1))];
        st.update(&mut p, &g2, &cfg);
        let m: f64 = 0.9 * 0.05 + 0.1 * -0.5;
        let v: f64 = 0.999 * 0.00025 + 0.001 * 0.25;
        let step = 1e-3 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.998001)).sqrt() + 1e-8);
        assert!((p.weight[[0, 0]] - (expect - step)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar(0.3);
        let mut st = AdamState::new(&p);
        let g = vec![Array2::zeros((1, 1)), Array2::zeros((1, 1))];
        for _ in 0..5 {
            st.update(&mut p, &g, &AdamConfig::default());
        }
        assert_eq!(p, scalar(0.3));
    }

    #[test]
    fn clipping() {
        let mut g = vec![Array2::from_elem((1, 2), 3.0), Array2::from_elem((1, 1), 4.0 * 2f64.sqrt())];
        let n = clip_global_norm(&mut g, 1.0);
        assert!((n - (18.0f64 + 32.0).sqrt()).abs() < 1e-12);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![Array2::from_elem((1, 1), 0.5)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0][[0, 0]], 0.5);
    }
}
