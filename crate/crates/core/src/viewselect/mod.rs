//! Learned viewpoint selection (selector bank + value network, trained in
//! three stages with policy gradients) and the sampling/fusion baselines.

pub mod bank;
pub mod baselines;
pub mod estimator;
pub mod train;
pub mod value;

pub use bank::SelectorBank;
pub use baselines::{
    fuse_views, sample_equidistant, sample_random, sample_trn_subsets, FusionMode, SubsetConfig,
};
pub use estimator::{MultiViewEstimator, SubsetEstimator};
pub use train::{
    train_baseline, train_three_stage, BaselineMethod, EstimatorKind, EvalScheme, NvsVariant,
    RolloutRecord, ThreeStageResult, TrainedMultiView, ViewSelectConfig,
};
pub use value::ValueNetwork;
