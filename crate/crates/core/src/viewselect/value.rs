//! Value network: a lightweight proxy that predicts the estimation loss
//! from a selection probability matrix.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::{Act, Mlp};
use crate::optim::ParamStore;
use crate::tensor::Tensor;

/// MLP from a flattened `M x N` probability matrix to a scalar predicted
/// loss.
#[derive(Debug, Clone)]
pub struct ValueNetwork {
    pub store: ParamStore,
    pub net: Mlp,
    pub m: usize,
    pub n: usize,
}

impl ValueNetwork {
    pub fn new(m: usize, n: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let net = Mlp::init(&mut store, rng, "vnet", &[m * n, hidden, 1], Act::Relu, Act::None);
        ValueNetwork { store, net, m, n }
    }

    fn check_probs(&self, probs: &[f32]) -> Result<()> {
        if probs.len() != self.m * self.n {
            return Err(Error::ShapeMismatch {
                op: "value_predict".into(),
                detail: format!("expected {} values, got {}", self.m * self.n, probs.len()),
            });
        }
        for r in 0..self.m {
            let sum: f64 = probs[r * self.n..(r + 1) * self.n]
                .iter()
                .map(|&v| v as f64)
                .sum();
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidDistribution(format!(
                    "row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Predicted loss for a probability matrix (rows must sum to 1).
    pub fn predict(&self, probs: &[f32]) -> Result<f32> {
        self.check_probs(probs)?;
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, self.m * self.n], probs.to_vec())?);
        let y = self.net.forward(&mut tape, &self.store, x)?;
        Ok(tape.value(y).data()[0])
    }

    /// Fits the network to `(probability matrix, observed loss)` pairs by
    /// full-batch squared-error descent. A step that would increase the
    /// loss is halved and retried, so the returned per-epoch loss trace is
    /// non-increasing.
    pub fn fit(&mut self, buffer: &[(Vec<f32>, f32)], epochs: usize, lr: f32) -> Result<Vec<f64>> {
        if buffer.is_empty() {
            return Err(Error::InvalidArgument("empty replay buffer".into()));
        }
        let b = buffer.len();
        let mut xs = Vec::with_capacity(b * self.m * self.n);
        let mut ys = Vec::with_capacity(b);
        for (probs, loss) in buffer {
            self.check_probs(probs)?;
            xs.extend_from_slice(probs);
            ys.push(*loss);
        }
        let x_t = Tensor::new(vec![b, self.m * self.n], xs)?;
        let y_t = Tensor::new(vec![b, 1], ys)?;

        let full_loss = |store: &ParamStore| -> Result<(f64, std::collections::BTreeMap<String, Vec<f32>>)> {
            let mut tape = Tape::new();
            let x = tape.input(x_t.clone());
            let y = tape.input(y_t.clone());
            let pred = self.net.forward(&mut tape, store, x)?;
            let loss = tape.mse(pred, y)?;
            let v = tape.value(loss).item()? as f64;
            tape.backward(loss)?;
            Ok((v, tape.param_grads()))
        };

        let mut trace = Vec::with_capacity(epochs + 1);
        let (mut current, mut grads) = full_loss(&self.store)?;
        trace.push(current);
        for _ in 0..epochs {
            let mut step = lr;
            let mut accepted = false;
            for _attempt in 0..12 {
                let mut candidate = self.store.clone();
                for (name, g) in &grads {
                    let p = candidate.get_mut(name).expect("bound param");
                    for (pv, &gv) in p.data_mut().iter_mut().zip(g) {
                        *pv -= step * gv;
                    }
                }
                let (next, next_grads) = full_loss(&candidate)?;
                if next <= current {
                    self.store = candidate;
                    current = next;
                    grads = next_grads;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // Converged to machine precision; keep the trace flat.
            }
            trace.push(current);
        }
        Ok(trace)
    }
}
