//! Small layer builders over the autodiff tape: parameter initialization
//! lives in a [`ParamStore`]; forward passes bind those parameters onto a
//! tape and chain ops.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::optim::ParamStore;
use crate::tensor::Tensor;

/// Activation applied after a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    Relu,
    Sigmoid,
    Tanh,
    None,
}

fn apply_act(tape: &mut Tape, x: Var, act: Act) -> Result<Var> {
    match act {
        Act::Relu => tape.relu(x),
        Act::Sigmoid => tape.sigmoid(x),
        Act::Tanh => tape.tanh(x),
        Act::None => Ok(x),
    }
}

/// Uniform He-style initialization for a weight of `fan_in` inputs.
fn init_weight(rng: &mut ChaCha8Rng, fan_in: usize, numel: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in as f32).sqrt();
    (0..numel).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Fully connected layer, parameters `{prefix}.w` and `{prefix}.b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        store.insert(
            format!("{prefix}.w"),
            Tensor::new(vec![in_dim, out_dim], init_weight(rng, in_dim, in_dim * out_dim))
                .expect("sized weight"),
        );
        store.insert(format!("{prefix}.b"), Tensor::zeros(vec![out_dim]));
        Dense {
            prefix: prefix.to_string(),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &format!("{}.w", self.prefix))?;
        let b = tape.param(store, &format!("{}.b", self.prefix))?;
        tape.affine(x, w, b)
    }
}

/// Multi-layer perceptron with a hidden activation and an output activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden_act: Act,
    pub out_act: Act,
}

impl Mlp {
    /// `dims` holds the full chain `[in, h1, ..., out]`.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        dims: &[usize],
        hidden_act: Act,
        out_act: Act,
    ) -> Self {
        assert!(dims.len() >= 2, "MLP needs at least input and output dims");
        let layers = (0..dims.len() - 1)
            .map(|i| {
                Dense::init(
                    store,
                    rng,
                    &format!("{prefix}.l{i}"),
                    dims[i],
                    dims[i + 1],
                )
            })
            .collect();
        Mlp {
            layers,
            hidden_act,
            out_act,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            let act = if i == last { self.out_act } else { self.hidden_act };
            x = apply_act(tape, x, act)?;
        }
        Ok(x)
    }
}

/// Image encoder: three stride-2 conv blocks with rectified-linear
/// activations, global average pooling, then an affine head.
///
/// Input `[B, 3, H, W]`, output `[B, out_dim]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvEncoder {
    pub prefix: String,
    pub channels: [usize; 3],
    pub out_dim: usize,
}

/// Default channel widths for desk-scale images.
pub const DEFAULT_CHANNELS: [usize; 3] = [8, 16, 32];

impl ConvEncoder {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        channels: [usize; 3],
        out_dim: usize,
    ) -> Self {
        let mut in_c = 3usize;
        for (i, &out_c) in channels.iter().enumerate() {
            let fan_in = in_c * 9;
            store.insert(
                format!("{prefix}.conv{i}.w"),
                Tensor::new(
                    vec![out_c, in_c, 3, 3],
                    init_weight(rng, fan_in, out_c * in_c * 9),
                )
                .expect("sized kernel"),
            );
            store.insert(format!("{prefix}.conv{i}.b"), Tensor::zeros(vec![out_c]));
            in_c = out_c;
        }
        store.insert(
            format!("{prefix}.head.w"),
            Tensor::new(
                vec![channels[2], out_dim],
                init_weight(rng, channels[2], channels[2] * out_dim),
            )
            .expect("sized head"),
        );
        store.insert(format!("{prefix}.head.b"), Tensor::zeros(vec![out_dim]));
        ConvEncoder {
            prefix: prefix.to_string(),
            channels,
            out_dim,
        }
    }

    /// Feature trunk only: conv blocks + global average pool, `[B, c3]`.
    pub fn trunk(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        for i in 0..3 {
            let w = tape.param(store, &format!("{}.conv{i}.w", self.prefix))?;
            let b = tape.param(store, &format!("{}.conv{i}.b", self.prefix))?;
            x = tape.conv2d(x, w, b, 2, 1)?;
            x = tape.relu(x)?;
        }
        tape.global_avg_pool(x)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let pooled = self.trunk(tape, store, x)?;
        let w = tape.param(store, &format!("{}.head.w", self.prefix))?;
        let b = tape.param(store, &format!("{}.head.b", self.prefix))?;
        tape.affine(pooled, w, b)
    }
}
