//! Network layers built on the autodiff tape.
//!
//! Parameter containers are generic over their leaf type: `Array2<f64>`
//! for storage, [`Var`] once bound into a [`Graph`]. `map` walks leaves in
//! a fixed order with stable dotted names, which the optimizer and the
//! checkpoint format rely on.

pub mod diffusion;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};

pub use diffusion::{
    diffuse, diffuse_var, gradient_features, gradient_features_var, DiffusionBlock,
    DiffusionStack, SpectralOps,
};

pub type Tensor = Array2<f64>;

/// Leaf visitor used by every parameter container.
pub trait ParamTree<T> {
    type Mapped<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::Mapped<U>;

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T));

    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &T)) {
        self.map_named(prefix, &mut |n, t| f(n, t));
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Binds stored parameters into a graph as trainable leaves.
pub fn bind<P: ParamTree<Tensor>>(g: &Graph, params: &P) -> P::Mapped<Var> {
    params.map_named("", &mut |_, t| g.param(t.clone()))
}

/// Names and shapes of all leaves, in visiting order.
pub fn leaf_shapes<P: ParamTree<Tensor>>(params: &P) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    params.for_each("", &mut |n, t| out.push((n.to_string(), t.dim())));
    out
}

pub fn num_parameters<P: ParamTree<Tensor>>(params: &P) -> usize {
    let mut n = 0;
    params.for_each("", &mut |_, t| n += t.len());
    n
}

/// Affine map `x · weight + bias`, weight `in × out`, bias `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

impl<T> ParamTree<T> for Linear<T> {
    type Mapped<U> = Linear<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Linear<U> {
        Linear {
            weight: f(&join(prefix, "weight"), &self.weight),
            bias: f(&join(prefix, "bias"), &self.bias),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Linear<Tensor> {
    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: uniform((fan_in, fan_out), 1.0 / (fan_in as f64).sqrt(), rng),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        x.dot(&self.weight) + &self.bias
    }
}

impl Linear<Var> {
    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        g.linear(x, self.weight, self.bias)
    }
}

impl<T, P: ParamTree<T>> ParamTree<T> for Vec<P> {
    type Mapped<U> = Vec<P::Mapped<U>>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::Mapped<U> {
        self.iter()
            .enumerate()
            .map(|(i, p)| p.map_named(&format!("{prefix}{i}"), f))
            .collect()
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.for_each_mut(&format!("{prefix}{i}"), f);
        }
    }
}

pub fn uniform(shape: (usize, usize), bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}
