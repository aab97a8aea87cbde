//! Image-to-tactile surface property estimation at desk scale.
//!
//! The crate provides:
//! - a reverse-mode autodiff core over dense tensors ([`autodiff`]),
//! - a procedural multiview visuo-tactile dataset generator and its on-disk
//!   format ([`synth`]),
//! - the cross-modal estimation framework: shared latent space, adversarial
//!   and pseudo-label classification objectives ([`crossmodal`]),
//! - learned viewpoint selection with policy gradients plus the sampling
//!   and fusion baselines ([`viewselect`]),
//! - evaluation metrics and report aggregation ([`metrics`]).

pub mod autodiff;
pub mod checkpoint;
pub mod crossmodal;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod sampling;
pub mod synth;
pub mod viewselect;

mod tensor;

pub use autodiff::{gradient_check, Tape, Var};
pub use error::{Error, Result};
pub use optim::{Adam, ParamStore};
pub use tensor::Tensor;
