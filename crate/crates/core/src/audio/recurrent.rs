//! Bidirectional stacked LSTM/GRU over projected audio features.
//!
//! Gate layouts follow the common convention: LSTM `[i, f, g, o]`, GRU
//! `[r, z, n]`, each cell carrying an input and a recurrent bias.

use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{join, uniform, Linear, ParamTree, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    pub fn parse(s: &str) -> Option<CellKind> {
        match s {
            "lstm" => Some(CellKind::Lstm),
            "gru" => Some(CellKind::Gru),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCell<T> {
    /// `in × gates·H`
    pub w_ih: T,
    /// `H × gates·H`
    pub w_hh: T,
    pub b_ih: T,
    pub b_hh: T,
}

impl<T> ParamTree<T> for RecurrentCell<T> {
    type Mapped<U> = RecurrentCell<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> RecurrentCell<U> {
        RecurrentCell {
            w_ih: f(&join(prefix, "w_ih"), &self.w_ih),
            w_hh: f(&join(prefix, "w_hh"), &self.w_hh),
            b_ih: f(&join(prefix, "b_ih"), &self.b_ih),
            b_hh: f(&join(prefix, "b_hh"), &self.b_hh),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "b_ih"), &mut self.b_ih);
        f(&join(prefix, "b_hh"), &mut self.b_hh);
    }
}

impl RecurrentCell<Tensor> {
    pub fn init(kind: CellKind, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        let g = kind.gates() * hidden;
        RecurrentCell {
            w_ih: uniform((input, g), b, rng),
            w_hh: uniform((hidden, g), b, rng),
            b_ih: uniform((1, g), b, rng),
            b_hh: uniform((1, g), b, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLayer<T> {
    pub forward: RecurrentCell<T>,
    pub backward: RecurrentCell<T>,
}

impl<T> ParamTree<T> for BiLayer<T> {
    type Mapped<U> = BiLayer<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> BiLayer<U> {
        BiLayer {
            forward: self.forward.map_named(&join(prefix, "fwd"), f),
            backward: self.backward.map_named(&join(prefix, "bwd"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.forward.for_each_mut(&join(prefix, "fwd"), f);
        self.backward.for_each_mut(&join(prefix, "bwd"), f);
    }
}

/// Audio projection, bidirectional layers and the output projection that
/// maps the `2H` concatenation to the latent width.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioStream<T> {
    pub projection: Linear<T>,
    pub layers: Vec<BiLayer<T>>,
    pub output: Linear<T>,
}

impl<T> ParamTree<T> for AudioStream<T> {
    type Mapped<U> = AudioStream<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> AudioStream<U> {
        AudioStream {
            projection: self.projection.map_named(&join(prefix, "projection"), f),
            layers: self.layers.map_named(&join(prefix, "layer"), f),
            output: self.output.map_named(&join(prefix, "output"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.projection.for_each_mut(&join(prefix, "projection"), f);
        self.layers.for_each_mut(&join(prefix, "layer"), f);
        self.output.for_each_mut(&join(prefix, "output"), f);
    }
}

fn swap_row_halves(w: &Tensor) -> Tensor {
    let h = w.nrows() / 2;
    ndarray::concatenate(ndarray::Axis(0), &[w.slice(s![h.., ..]), w.slice(s![..h, ..])]).unwrap()
}

impl AudioStream<Tensor> {
    /// `feature_dim → latent/2`, `layers` bidirectional layers of `hidden`
    /// units per direction, `2·hidden → latent`.
    pub fn init(
        kind: CellKind,
        feature_dim: usize,
        latent: usize,
        hidden: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let proj_out = (latent / 2).max(1);
        let projection = Linear::init(feature_dim, proj_out, rng);
        let layers = (0..layers)
            .map(|l| {
                let input = if l == 0 { proj_out } else { 2 * hidden };
                BiLayer {
                    forward: RecurrentCell::init(kind, input, hidden, rng),
                    backward: RecurrentCell::init(kind, input, hidden, rng),
                }
            })
            .collect();
        let output = Linear::init(2 * hidden, latent, rng);
        AudioStream {
            projection,
            layers,
            output,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.fan_in()
    }

    /// Exchanges the roles of the two directions. Running the result on a
    /// time-reversed input yields the time-reversed output.
    pub fn swap_directions(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let fix = |c: &RecurrentCell<Tensor>| {
                    let mut c = c.clone();
                    if l > 0 {
                        c.w_ih = swap_row_halves(&c.w_ih);
                    }
                    c
                };
                BiLayer {
                    forward: fix(&layer.backward),
                    backward: fix(&layer.forward),
                }
            })
            .collect();
        AudioStream {
            projection: self.projection.clone(),
            layers,
            output: Linear {
                weight: swap_row_halves(&self.output.weight),
                bias: self.output.bias.clone(),
            },
        }
    }
}

fn run_direction(g: &Graph, kind: CellKind, cell: &RecurrentCell<Var>, xp: Var, reverse: bool) -> Vec<Var> {
    let (t_len, width) = g.shape(xp);
    let h_dim = width / kind.gates();
    let mut h = g.constant(Array2::zeros((1, h_dim)));
    let mut c = g.constant(Array2::zeros((1, h_dim)));
    let mut out = vec![h; t_len];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    let gate = |v: Var, k: usize| g.slice_cols(v, k * h_dim..(k + 1) * h_dim);
    for t in order {
        let x = g.slice_rows(xp, t..t + 1);
        let hp = g.linear(h, cell.w_hh, cell.b_hh);
        match kind {
            CellKind::Lstm => {
                let z = g.add(x, hp);
                let i = g.sigmoid(gate(z, 0));
                let f = g.sigmoid(gate(z, 1));
                let cand = g.tanh(gate(z, 2));
                let o = g.sigmoid(gate(z, 3));
                c = g.add(g.mul(f, c), g.mul(i, cand));
                h = g.mul(o, g.tanh(c));
            }
            CellKind::Gru => {
                let r = g.sigmoid(g.add(gate(x, 0), gate(hp, 0)));
                let z = g.sigmoid(g.add(gate(x, 1), gate(hp, 1)));
                let n = g.tanh(g.add(gate(x, 2), g.mul(r, gate(hp, 2))));
                h = g.add(g.mul(g.one_minus(z), n), g.mul(z, h));
            }
        }
        out[t] = h;
    }
    out
}

fn first_non_finite_row(a: &Array2<f64>) -> Option<usize> {
    a.rows().into_iter().position(|r| r.iter().any(|x| !x.is_finite()))
}

impl AudioStream<Var> {
    /// Projected features `T × latent/2`.
    pub fn project(&self, g: &Graph, features: Var) -> Var {
        self.projection.forward(g, features)
    }

    /// Temporal latent `T × latent` from raw features `T × D`.
    pub fn forward(&self, g: &Graph, kind: CellKind, features: Var) -> Result<Var> {
        let mut x = self.project(g, features);
        for (l, layer) in self.layers.iter().enumerate() {
            let xf = g.linear(x, layer.forward.w_ih, layer.forward.b_ih);
            let xb = g.linear(x, layer.backward.w_ih, layer.backward.b_ih);
            let hf = run_direction(g, kind, &layer.forward, xf, false);
            let hb = run_direction(g, kind, &layer.backward, xb, true);
            x = g.concat_cols(&[g.concat_rows(&hf), g.concat_rows(&hb)]);
            if let Some(t) = first_non_finite_row(&g.value(x)) {
                return Err(Error::NonFinite(format!("recurrent layer {l}, frame {t}")));
            }
        }
        Ok(self.output.forward(g, x))
    }
}
