//! Multi-view tactile estimators: a shared per-view encoder with a
//! late-fusion head, and the random-subset variant with one head per
//! subset size.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::crossmodal::model::TACTILE_MAX;
use crate::error::{Error, Result};
use crate::nn::{Act, ConvEncoder, Mlp};
use crate::optim::ParamStore;
use crate::viewselect::baselines::FusionMode;

/// Shared-encoder estimator: every selected view runs through the same
/// encoder; features fuse by concatenation (selector order) or elementwise
/// max, then a fusion head maps to the tactile output.
#[derive(Debug, Clone)]
pub struct MultiViewEstimator {
    pub store: ParamStore,
    pub enc: ConvEncoder,
    pub fusion: Mlp,
    pub mode: FusionMode,
    pub num_views_in: usize,
    pub latent_dim: usize,
    pub out_dim: usize,
}

/// Encoder parameter prefix (frozen during policy search).
pub const ENC_PREFIX: &str = "mv.enc.";
/// Fusion-head parameter prefix (stays trainable during policy search).
pub const FUSE_PREFIX: &str = "mv.fuse.";

impl MultiViewEstimator {
    pub fn init(
        rng: &mut ChaCha8Rng,
        num_views_in: usize,
        latent_dim: usize,
        out_dim: usize,
        channels: [usize; 3],
        hidden: usize,
        mode: FusionMode,
    ) -> Self {
        let mut store = ParamStore::new();
        let enc = ConvEncoder::init(&mut store, rng, "mv.enc", channels, latent_dim);
        let fused_dim = match mode {
            FusionMode::Concat => num_views_in * latent_dim,
            FusionMode::MaxPool => latent_dim,
        };
        let fusion = Mlp::init(
            &mut store,
            rng,
            "mv.fuse",
            &[fused_dim, hidden, out_dim],
            Act::Relu,
            Act::None,
        );
        MultiViewEstimator {
            store,
            enc,
            fusion,
            mode,
            num_views_in,
            latent_dim,
            out_dim,
        }
    }

    /// Raw tactile estimates `[B, out_dim]` from per-view image batches.
    /// `views.len()` must equal `num_views_in`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, views: &[Var]) -> Result<Var> {
        if views.len() != self.num_views_in {
            return Err(Error::ShapeMismatch {
                op: "multiview_forward".into(),
                detail: format!(
                    "estimator fuses {} views, got {}",
                    self.num_views_in,
                    views.len()
                ),
            });
        }
        let feats: Vec<Var> = views
            .iter()
            .map(|&v| self.enc.forward(tape, store, v))
            .collect::<Result<_>>()?;
        let fused = match self.mode {
            FusionMode::Concat => tape.concat(&feats, 1)?,
            FusionMode::MaxPool => tape.max_many(&feats)?,
        };
        let pre = self.fusion.forward(tape, store, fused)?;
        let sig = tape.sigmoid(pre)?;
        tape.scale(sig, TACTILE_MAX)
    }
}

/// Random-subset estimator: shared encoder, features of a subset
/// concatenated into the head matching the subset's size.
#[derive(Debug, Clone)]
pub struct SubsetEstimator {
    pub store: ParamStore,
    pub enc: ConvEncoder,
    /// One fusion head per subset size, sizes `2..=max_size`.
    pub heads: Vec<(usize, Mlp)>,
    pub latent_dim: usize,
    pub out_dim: usize,
    pub max_size: usize,
}

impl SubsetEstimator {
    pub fn init(
        rng: &mut ChaCha8Rng,
        max_size: usize,
        latent_dim: usize,
        out_dim: usize,
        channels: [usize; 3],
        hidden: usize,
    ) -> Self {
        let mut store = ParamStore::new();
        let enc = ConvEncoder::init(&mut store, rng, "mv.enc", channels, latent_dim);
        let heads = (2..=max_size)
            .map(|s| {
                let head = Mlp::init(
                    &mut store,
                    rng,
                    &format!("mv.fuse{s}"),
                    &[s * latent_dim, hidden, out_dim],
                    Act::Relu,
                    Act::None,
                );
                (s, head)
            })
            .collect();
        SubsetEstimator {
            store,
            enc,
            heads,
            latent_dim,
            out_dim,
            max_size,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, views: &[Var]) -> Result<Var> {
        let head = self
            .heads
            .iter()
            .find(|(s, _)| *s == views.len())
            .map(|(_, h)| h)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no fusion head for subset size {}", views.len()))
            })?;
        let feats: Vec<Var> = views
            .iter()
            .map(|&v| self.enc.forward(tape, store, v))
            .collect::<Result<_>>()?;
        let fused = tape.concat(&feats, 1)?;
        let pre = head.forward(tape, store, fused)?;
        let sig = tape.sigmoid(pre)?;
        tape.scale(sig, TACTILE_MAX)
    }
}
