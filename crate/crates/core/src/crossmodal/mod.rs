//! Cross-modal image-to-tactile estimation: shared latent space,
//! adversarial objective, visuo-tactile pseudo-label classification, and
//! the regression baseline.

pub mod kmeans;
pub mod labels;
pub mod model;
pub mod pca;
pub mod stats;
pub mod train;

pub use kmeans::{kmeans, KMeansResult};
pub use labels::{build_pseudo_labels, PseudoLabeler};
pub use model::{
    loss_adversarial, loss_class, loss_emb, total_loss, AdversarialLosses, CrossModalConfig,
    CrossModalModel, LossWeights,
};
pub use pca::{fit_pca, PcaBasis};
pub use stats::TargetStats;
pub use train::{
    train_cross_modal, train_regression, EpochLog, TargetMode, TrainConfig, TrainedCrossModal,
    TrainedRegression,
};
