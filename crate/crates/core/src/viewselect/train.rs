//! Three-stage viewpoint-selection training and the multi-view baselines.
//!
//! Stage 1 trains the estimator with random view combinations. Stage 2
//! freezes everything except the late-fusion head and updates the selector
//! bank by policy gradients against the estimation loss observed on
//! held-out training mini-batches (the validation split stays untouched
//! for reporting). Stage 3 reinitializes the estimator and trains it on
//! the selected combination `q*`.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::crossmodal::stats::TargetStats;
use crate::crossmodal::train::TargetMode;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::sampling::{derive_seed, seed_stream};
use crate::synth::format::Dataset;
use crate::synth::registry::NUM_PROPERTIES;
use crate::tensor::Tensor;
use crate::viewselect::bank::SelectorBank;
use crate::viewselect::baselines::{
    sample_equidistant, sample_random, sample_trn_subsets, FusionMode, SubsetConfig,
};
use crate::viewselect::estimator::{MultiViewEstimator, SubsetEstimator, ENC_PREFIX, FUSE_PREFIX};
use crate::viewselect::value::ValueNetwork;

/// Learned selector variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NvsVariant {
    /// Selector bank alone; `q*` is the bank's deterministic pick.
    Nvs,
    /// Selector bank plus a value network; `q*` minimizes the predicted
    /// loss over a candidate pool.
    VbNvs,
}

/// Non-learned multi-view baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMethod {
    /// Random `M`-combinations at train time, fresh random views per
    /// sample at evaluation.
    Random,
    /// Fixed equidistant views for both training and evaluation.
    Equidistant,
    /// Concatenated features of every available view.
    LateFusionAll,
    /// Elementwise-max pooled features of every available view.
    ViewPoolAll,
    /// Random subsets of mixed sizes with per-size heads; evaluation
    /// averages over several subsets.
    Trn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewSelectConfig {
    /// Views the estimator fuses (the paper's M).
    pub m: usize,
    pub latent_dim: usize,
    pub channels: [usize; 3],
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub stage2_iters: usize,
    pub policy_lr: f32,
    pub baseline_decay: f64,
    pub rollout_batch: usize,
    pub value_hidden: usize,
    pub value_pool: usize,
    pub value_fit_every: usize,
    pub value_fit_epochs: usize,
    pub value_lr: f32,
    pub trn_max_size: usize,
    pub trn_eval_subsets: usize,
    pub target: TargetMode,
    pub seed: u64,
}

impl Default for ViewSelectConfig {
    fn default() -> Self {
        ViewSelectConfig {
            m: 3,
            latent_dim: 100,
            channels: crate::nn::DEFAULT_CHANNELS,
            hidden: 64,
            epochs: 30,
            lr: 1e-4,
            batch_size: 16,
            stage2_iters: 500,
            policy_lr: 0.05,
            baseline_decay: 0.9,
            rollout_batch: 16,
            value_hidden: 32,
            value_pool: 256,
            value_fit_every: 50,
            value_fit_epochs: 60,
            value_lr: 0.2,
            trn_max_size: 3,
            trn_eval_subsets: 8,
            target: TargetMode::Joint,
            seed: 0,
        }
    }
}

/// One stage-2 rollout: the sampled combination, observed loss and the
/// running reward baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub iter: usize,
    pub q: Vec<usize>,
    pub loss: f64,
    pub reward_baseline: f64,
}

/// How a trained estimator picks its views at evaluation time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum EvalScheme {
    FixedViews(Vec<usize>),
    RandomPerSample { m: usize },
    SubsetAverage { max_size: usize, subsets: usize },
}

#[derive(Debug, Clone)]
pub enum EstimatorKind {
    Fused(MultiViewEstimator),
    Subset(SubsetEstimator),
}

/// A trained multi-view estimator plus its evaluation scheme.
#[derive(Debug, Clone)]
pub struct TrainedMultiView {
    pub estimator: EstimatorKind,
    pub scheme: EvalScheme,
    pub stats: TargetStats,
    pub target: TargetMode,
    /// Per-epoch mean train loss of the final fit.
    pub train_loss: Vec<f64>,
}

/// Everything produced by the three-stage pipeline.
#[derive(Debug, Clone)]
pub struct ThreeStageResult {
    pub q_star: Vec<usize>,
    pub trained: TrainedMultiView,
    pub bank: SelectorBank,
    pub value_net: Option<ValueNetwork>,
    pub rollouts: Vec<RolloutRecord>,
    /// Stage-1 estimator, kept for random-vs-selected comparisons.
    pub stage1: TrainedMultiView,
}

// ── Shared data plumbing ─────────────────────────────────────────────

struct MvPrepared {
    ids: Vec<usize>,
    targets_raw: Vec<[f32; NUM_PROPERTIES]>,
    stats: TargetStats,
    h: usize,
    w: usize,
    n_views: usize,
}

fn mv_prepare(ds: &Dataset, ids: &[usize]) -> Result<MvPrepared> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("empty id list".into()));
    }
    let targets_raw: Vec<[f32; NUM_PROPERTIES]> =
        ids.iter().map(|&id| ds.sample(id).target()).collect();
    let rows: Vec<Vec<f32>> = targets_raw.iter().map(|t| t.to_vec()).collect();
    Ok(MvPrepared {
        ids: ids.to_vec(),
        targets_raw,
        stats: TargetStats::fit(&rows)?,
        h: ds.manifest.image_height,
        w: ds.manifest.image_width,
        n_views: ds.manifest.views_per_sample,
    })
}

impl MvPrepared {
    /// Batch of frame `view` across the given positions, `[B, 3, H, W]`.
    fn view_batch(&self, ds: &Dataset, batch: &[usize], view: usize) -> Tensor {
        let plane = 3 * self.h * self.w;
        let mut data = Vec::with_capacity(batch.len() * plane);
        for &pos in batch {
            data.extend(ds.sample(self.ids[pos]).sequence.frame_chw(view));
        }
        Tensor::new(vec![batch.len(), 3, self.h, self.w], data).expect("sized batch")
    }

    fn t_sel_batch(&self, batch: &[usize], target: TargetMode) -> Tensor {
        let props = target.property_indices();
        let mut data = Vec::with_capacity(batch.len() * props.len());
        for &pos in batch {
            for &p in &props {
                data.push((self.targets_raw[pos][p] - self.stats.mean[p]) / self.stats.std[p]);
            }
        }
        Tensor::new(vec![batch.len(), props.len()], data).expect("sized batch")
    }

    fn sel_stats(&self, target: TargetMode) -> (Vec<f32>, Vec<f32>) {
        let props = target.property_indices();
        (
            props.iter().map(|&p| self.stats.mean[p]).collect(),
            props.iter().map(|&p| self.stats.std[p]).collect(),
        )
    }
}

fn standardize_var(tape: &mut Tape, raw: Var, mean: &[f32], std: &[f32]) -> Result<Var> {
    let mean_v = tape.input(Tensor::from_vec(mean.to_vec()));
    let inv: Vec<f32> = std.iter().map(|&s| 1.0 / s).collect();
    let inv_v = tape.input(Tensor::from_vec(inv));
    let centered = tape.sub(raw, mean_v)?;
    tape.mul(centered, inv_v)
}

/// Forward + loss for one batch and view combination; returns the loss
/// value after an optimizer step on the non-frozen parameters.
fn fused_step(
    est: &mut MultiViewEstimator,
    prep: &MvPrepared,
    ds: &Dataset,
    batch: &[usize],
    q: &[usize],
    target: TargetMode,
    opt: &mut Adam,
    freeze_encoder: bool,
) -> Result<f64> {
    let (mean, std) = prep.sel_stats(target);
    let mut tape = Tape::new();
    if freeze_encoder {
        tape.freeze_prefix(ENC_PREFIX);
    }
    let views: Vec<Var> = q
        .iter()
        .map(|&v| {
            let t = prep.view_batch(ds, batch, v);
            tape.input(t)
        })
        .collect();
    let store = est.store.clone();
    let raw = est.forward(&mut tape, &store, &views)?;
    let est_z = standardize_var(&mut tape, raw, &mean, &std)?;
    let t_in = tape.input(prep.t_sel_batch(batch, target));
    let loss = tape.mse(est_z, t_in)?;
    let v = tape.value(loss).item()? as f64;
    tape.backward(loss)?;
    opt.step(&mut est.store, &tape.param_grads())?;
    Ok(v)
}

/// Loss only (no update), used for evaluating candidate combinations.
fn fused_loss(
    est: &MultiViewEstimator,
    prep: &MvPrepared,
    ds: &Dataset,
    batch: &[usize],
    q: &[usize],
    target: TargetMode,
) -> Result<f64> {
    let (mean, std) = prep.sel_stats(target);
    let mut tape = Tape::new();
    let views: Vec<Var> = q
        .iter()
        .map(|&v| {
            let t = prep.view_batch(ds, batch, v);
            tape.input(t)
        })
        .collect();
    let raw = est.forward(&mut tape, &est.store, &views)?;
    let est_z = standardize_var(&mut tape, raw, &mean, &std)?;
    let t_in = tape.input(prep.t_sel_batch(batch, target));
    let loss = tape.mse(est_z, t_in)?;
    Ok(tape.value(loss).item()? as f64)
}

fn epoch_order(n: usize, seed: u64, tag: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed_stream(seed, &format!("{tag}-{epoch}")));
    order
}

/// Trains a fused estimator for `epochs`, drawing the view combination per
/// batch from `pick`. Returns per-epoch mean losses.
fn train_fused_epochs(
    est: &mut MultiViewEstimator,
    prep: &MvPrepared,
    ds: &Dataset,
    cfg: &ViewSelectConfig,
    epochs: usize,
    shuffle_tag: &str,
    mut pick: impl FnMut(&mut ChaCha8Rng) -> Vec<usize>,
) -> Result<Vec<f64>> {
    let mut opt = Adam::new(cfg.lr);
    let mut q_rng = seed_stream(cfg.seed, &format!("{shuffle_tag}-q"));
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let order = epoch_order(prep.ids.len(), cfg.seed, shuffle_tag, epoch);
        let mut sum = 0.0f64;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let q = pick(&mut q_rng);
            sum += fused_step(est, prep, ds, batch, &q, cfg.target, &mut opt, false)
                .map_err(|e| stage_diverged(e, shuffle_tag, epoch))?;
            batches += 1;
        }
        log.push(sum / batches as f64);
    }
    Ok(log)
}

fn stage_diverged(e: Error, stage: &str, epoch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged(format!(
            "non-finite value in {op} during {stage}, epoch {epoch}"
        )),
        other => other,
    }
}

fn one_hot_probs(m: usize, n: usize, q: &[usize]) -> Vec<f32> {
    let mut v = vec![0.0f32; m * n];
    for (r, &i) in q.iter().enumerate() {
        v[r * n + i] = 1.0;
    }
    v
}

/// Splits the train ids into an estimator-fit subset and a held-out
/// policy-evaluation subset (about one fifth, at least one sample).
fn fit_policy_split(ds: &Dataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids = ds.train_ids().to_vec();
    ids.shuffle(&mut seed_stream(seed, "stage-split"));
    let policy = (ids.len() / 5).max(1);
    let policy_ids: Vec<usize> = ids[..policy].to_vec();
    let fit_ids: Vec<usize> = ids[policy..].to_vec();
    (fit_ids, policy_ids)
}

/// Runs the full three-stage pipeline.
pub fn train_three_stage(
    ds: &Dataset,
    cfg: &ViewSelectConfig,
    variant: NvsVariant,
) -> Result<ThreeStageResult> {
    let n_views = ds.manifest.views_per_sample;
    if cfg.m == 0 {
        return Err(Error::InvalidConfig("m must be >= 1".into()));
    }
    let (fit_ids, policy_ids) = fit_policy_split(ds, cfg.seed);
    if fit_ids.is_empty() || policy_ids.is_empty() {
        return Err(Error::InvalidArgument("train split too small for staging".into()));
    }
    let fit_prep = mv_prepare(ds, &fit_ids)?;
    let policy_prep = mv_prepare(ds, &policy_ids)?;
    let out_dim = cfg.target.out_dim();

    // Stage 1: estimator on random combinations.
    let mut est = MultiViewEstimator::init(
        &mut seed_stream(cfg.seed, "stage1-init"),
        cfg.m,
        cfg.latent_dim,
        out_dim,
        cfg.channels,
        cfg.hidden,
        FusionMode::Concat,
    );
    let stage1_log = train_fused_epochs(
        &mut est,
        &fit_prep,
        ds,
        cfg,
        cfg.epochs,
        "stage1",
        |rng| sample_random(n_views, cfg.m, rng),
    )?;
    let stage1 = TrainedMultiView {
        estimator: EstimatorKind::Fused(est.clone()),
        scheme: EvalScheme::RandomPerSample { m: cfg.m },
        stats: fit_prep.stats.clone(),
        target: cfg.target,
        train_loss: stage1_log,
    };

    // Stage 2: encoder frozen (fusion head still trains), selector bank
    // updated by policy gradients with an EMA reward baseline.
    let mut bank = SelectorBank::new_uniform(cfg.m, n_views)?;
    let mut value_net = match variant {
        NvsVariant::Nvs => None,
        NvsVariant::VbNvs => Some(ValueNetwork::new(
            cfg.m,
            n_views,
            cfg.value_hidden,
            &mut seed_stream(cfg.seed, "value-init"),
        )),
    };
    let mut replay: Vec<(Vec<f32>, f32)> = Vec::new();
    let mut rollouts = Vec::with_capacity(cfg.stage2_iters);
    let mut opt_fuse = Adam::new(cfg.lr);
    let mut policy_rng = seed_stream(cfg.seed, "stage2-policy");
    let mut batch_rng = seed_stream(cfg.seed, "stage2-batches");
    let mut baseline = 0.0f64;

    for iter in 0..cfg.stage2_iters {
        let q = bank.select_stochastic(&mut policy_rng)?;
        // Held-out training mini-batch for the rollout loss.
        let mut batch: Vec<usize> = (0..policy_prep.ids.len()).collect();
        batch.shuffle(&mut batch_rng);
        batch.truncate(cfg.rollout_batch.min(policy_prep.ids.len()));

        let loss = {
            let (mean, std) = policy_prep.sel_stats(cfg.target);
            let mut tape = Tape::new();
            tape.freeze_prefix(ENC_PREFIX);
            let views: Vec<Var> = q
                .iter()
                .map(|&v| {
                    let t = policy_prep.view_batch(ds, &batch, v);
                    tape.input(t)
                })
                .collect();
            let store = est.store.clone();
            let raw = est.forward(&mut tape, &store, &views)?;
            let est_z = standardize_var(&mut tape, raw, &mean, &std)?;
            let t_in = tape.input(policy_prep.t_sel_batch(&batch, cfg.target));
            let l = tape.mse(est_z, t_in)?;
            let v = tape.value(l).item()? as f64;
            tape.backward(l)?;
            opt_fuse.step(&mut est.store, &tape.param_grads())?;
            v
        };

        let reward = -loss;
        if iter == 0 {
            baseline = reward;
        }
        bank.reinforce_update(&q, reward, baseline, cfg.policy_lr)?;
        baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * reward;
        rollouts.push(RolloutRecord {
            iter,
            q: q.clone(),
            loss,
            reward_baseline: baseline,
        });

        if let Some(vnet) = value_net.as_mut() {
            replay.push((one_hot_probs(cfg.m, n_views, &q), loss as f32));
            if (iter + 1) % cfg.value_fit_every == 0 || iter + 1 == cfg.stage2_iters {
                vnet.fit(&replay, cfg.value_fit_epochs, cfg.value_lr)?;
            }
        }
    }

    // q*: deterministic pick, or the value network's argmin over a pool of
    // stochastic draws plus the deterministic pick.
    let q_star = match (&variant, value_net.as_ref()) {
        (NvsVariant::Nvs, _) => bank.select_deterministic(),
        (NvsVariant::VbNvs, Some(vnet)) => {
            let mut pool_rng = seed_stream(cfg.seed, "vbnvs-pool");
            let mut candidates = vec![bank.select_deterministic()];
            for _ in 0..cfg.value_pool {
                candidates.push(bank.select_stochastic(&mut pool_rng)?);
            }
            let mut best = candidates[0].clone();
            let mut best_v = f32::INFINITY;
            for cand in candidates {
                let v = vnet.predict(&one_hot_probs(cfg.m, n_views, &cand))?;
                if v < best_v {
                    best_v = v;
                    best = cand;
                }
            }
            best
        }
        (NvsVariant::VbNvs, None) => unreachable!("value net built for VB variant"),
    };

    // Stage 3: reinitialize and train on the selected combination.
    let mut est3 = MultiViewEstimator::init(
        &mut seed_stream(cfg.seed, "stage3-init"),
        cfg.m,
        cfg.latent_dim,
        out_dim,
        cfg.channels,
        cfg.hidden,
        FusionMode::Concat,
    );
    let q_fixed = q_star.clone();
    let stage3_log = train_fused_epochs(
        &mut est3,
        &fit_prep,
        ds,
        cfg,
        cfg.epochs,
        "stage3",
        move |_| q_fixed.clone(),
    )?;

    Ok(ThreeStageResult {
        q_star: q_star.clone(),
        trained: TrainedMultiView {
            estimator: EstimatorKind::Fused(est3),
            scheme: EvalScheme::FixedViews(q_star),
            stats: fit_prep.stats.clone(),
            target: cfg.target,
            train_loss: stage3_log,
        },
        bank,
        value_net,
        rollouts,
        stage1,
    })
}

/// Trains one of the non-learned multi-view baselines. Baselines fit on
/// the same estimator-fit subset the staged pipeline uses, keeping the
/// comparisons like for like.
pub fn train_baseline(
    ds: &Dataset,
    cfg: &ViewSelectConfig,
    method: BaselineMethod,
) -> Result<TrainedMultiView> {
    let n_views = ds.manifest.views_per_sample;
    let (fit_ids, _) = fit_policy_split(ds, cfg.seed);
    let prep = mv_prepare(ds, &fit_ids)?;
    let out_dim = cfg.target.out_dim();
    let mut rng_init = seed_stream(cfg.seed, "baseline-init");

    match method {
        BaselineMethod::Trn => {
            let mut est = SubsetEstimator::init(
                &mut rng_init,
                cfg.trn_max_size.min(n_views),
                cfg.latent_dim,
                out_dim,
                cfg.channels,
                cfg.hidden,
            );
            let mut opt = Adam::new(cfg.lr);
            let sub_cfg = SubsetConfig {
                max_size: cfg.trn_max_size.min(n_views),
                count: 1,
            };
            let mut q_rng = seed_stream(cfg.seed, "trn-q");
            let (mean, std) = prep.sel_stats(cfg.target);
            let mut log = Vec::with_capacity(cfg.epochs);
            for epoch in 0..cfg.epochs {
                let order = epoch_order(prep.ids.len(), cfg.seed, "trn", epoch);
                let mut sum = 0.0f64;
                let mut batches = 0usize;
                for batch in order.chunks(cfg.batch_size) {
                    let subset = sample_trn_subsets(n_views, &sub_cfg, &mut q_rng)?
                        .pop()
                        .expect("one subset");
                    let mut tape = Tape::new();
                    let views: Vec<Var> = subset
                        .iter()
                        .map(|&v| {
                            let t = prep.view_batch(ds, batch, v);
                            tape.input(t)
                        })
                        .collect();
                    let store = est.store.clone();
                    let raw = est.forward(&mut tape, &store, &views)?;
                    let est_z = standardize_var(&mut tape, raw, &mean, &std)?;
                    let t_in = tape.input(prep.t_sel_batch(batch, cfg.target));
                    let loss = tape.mse(est_z, t_in)?;
                    sum += tape.value(loss).item()? as f64;
                    tape.backward(loss)?;
                    opt.step(&mut est.store, &tape.param_grads())?;
                    batches += 1;
                }
                log.push(sum / batches as f64);
            }
            Ok(TrainedMultiView {
                estimator: EstimatorKind::Subset(est),
                scheme: EvalScheme::SubsetAverage {
                    max_size: cfg.trn_max_size.min(n_views),
                    subsets: cfg.trn_eval_subsets,
                },
                stats: prep.stats,
                target: cfg.target,
                train_loss: log,
            })
        }
        _ => {
            let (views_in, mode, scheme): (usize, FusionMode, EvalScheme) = match method {
                BaselineMethod::Random => (
                    cfg.m,
                    FusionMode::Concat,
                    EvalScheme::RandomPerSample { m: cfg.m },
                ),
                BaselineMethod::Equidistant => {
                    let q = sample_equidistant(n_views, cfg.m);
                    (cfg.m, FusionMode::Concat, EvalScheme::FixedViews(q))
                }
                BaselineMethod::LateFusionAll => {
                    let q: Vec<usize> = (0..n_views).collect();
                    (n_views, FusionMode::Concat, EvalScheme::FixedViews(q))
                }
                BaselineMethod::ViewPoolAll => {
                    let q: Vec<usize> = (0..n_views).collect();
                    (n_views, FusionMode::MaxPool, EvalScheme::FixedViews(q))
                }
                BaselineMethod::Trn => unreachable!(),
            };
            let mut est = MultiViewEstimator::init(
                &mut rng_init,
                views_in,
                cfg.latent_dim,
                out_dim,
                cfg.channels,
                cfg.hidden,
                mode,
            );
            let fixed_q = match &scheme {
                EvalScheme::FixedViews(q) => Some(q.clone()),
                _ => None,
            };
            let log = train_fused_epochs(
                &mut est,
                &prep,
                ds,
                cfg,
                cfg.epochs,
                "baseline",
                move |rng| match &fixed_q {
                    Some(q) => q.clone(),
                    None => sample_random(n_views, views_in, rng),
                },
            )?;
            Ok(TrainedMultiView {
                estimator: EstimatorKind::Fused(est),
                scheme,
                stats: prep.stats,
                target: cfg.target,
                train_loss: log,
            })
        }
    }
}

impl TrainedMultiView {
    /// Raw-unit predictions for the given sample ids. `seed` drives the
    /// per-sample randomness of the random / subset-average schemes.
    pub fn predict_ids(&self, ds: &Dataset, ids: &[usize], seed: u64) -> Result<Vec<Vec<f32>>> {
        let (h, w) = (ds.manifest.image_height, ds.manifest.image_width);
        let n_views = ds.manifest.views_per_sample;
        let mut preds = Vec::with_capacity(ids.len());
        for &id in ids {
            let sample = ds.sample(id);
            let frame = |v: usize| -> Result<Tensor> {
                Tensor::new(vec![1, 3, h, w], sample.sequence.frame_chw(v))
            };
            let run_views = |qs: &[usize]| -> Result<Vec<f32>> {
                let mut tape = Tape::new();
                let views: Vec<Var> = qs
                    .iter()
                    .map(|&v| Ok(tape.input(frame(v)?)))
                    .collect::<Result<_>>()?;
                let raw = match &self.estimator {
                    EstimatorKind::Fused(est) => est.forward(&mut tape, &est.store, &views)?,
                    EstimatorKind::Subset(est) => est.forward(&mut tape, &est.store, &views)?,
                };
                Ok(tape.value(raw).data().to_vec())
            };
            let pred = match &self.scheme {
                EvalScheme::FixedViews(q) => run_views(q)?,
                EvalScheme::RandomPerSample { m } => {
                    let mut rng = seed_stream(derive_seed(seed, id as u64), "eval-random");
                    run_views(&sample_random(n_views, *m, &mut rng))?
                }
                EvalScheme::SubsetAverage { max_size, subsets } => {
                    let mut rng = seed_stream(derive_seed(seed, id as u64), "eval-trn");
                    let sub_cfg = SubsetConfig {
                        max_size: *max_size,
                        count: *subsets,
                    };
                    let all = sample_trn_subsets(n_views, &sub_cfg, &mut rng)?;
                    let mut acc = vec![0.0f64; self.target.out_dim()];
                    for subset in &all {
                        for (a, v) in acc.iter_mut().zip(run_views(subset)?) {
                            *a += v as f64;
                        }
                    }
                    acc.into_iter().map(|v| (v / all.len() as f64) as f32).collect()
                }
            };
            preds.push(pred);
        }
        Ok(preds)
    }
}
