//! Training loops for the cross-modal framework and the regression
//! baseline, plus prediction and checkpoint persistence.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::crossmodal::labels::{build_pseudo_labels, PseudoLabeler};
use crate::crossmodal::model::{
    loss_adversarial, loss_class, loss_emb, total_loss, CrossModalConfig, CrossModalModel,
    LossWeights, DISC_PREFIXES, MAIN_PREFIXES,
};
use crate::crossmodal::pca::PcaBasis;
use crate::crossmodal::stats::TargetStats;
use crate::error::{Error, Result};
use crate::nn::{ConvEncoder, Dense};
use crate::optim::{Adam, ParamStore};
use crate::sampling::seed_stream;
use crate::synth::format::Dataset;
use crate::synth::registry::NUM_PROPERTIES;
use crate::tensor::Tensor;

/// What the estimator predicts: all fifteen properties jointly or a single
/// property (separate network per property).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetMode {
    Joint,
    Single(usize),
}

impl TargetMode {
    pub fn out_dim(&self) -> usize {
        match self {
            TargetMode::Joint => NUM_PROPERTIES,
            TargetMode::Single(_) => 1,
        }
    }

    /// Property indices covered by this target.
    pub fn property_indices(&self) -> Vec<usize> {
        match self {
            TargetMode::Joint => (0..NUM_PROPERTIES).collect(),
            TargetMode::Single(p) => vec![*p],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub channels: [usize; 3],
    pub hidden: usize,
    pub disc_feat_dim: usize,
    pub weights: LossWeights,
    pub k: usize,
    pub d_pca: usize,
    pub target: TargetMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-4,
            batch_size: 16,
            latent_dim: 50,
            channels: crate::nn::DEFAULT_CHANNELS,
            hidden: 64,
            disc_feat_dim: 32,
            weights: LossWeights::default(),
            k: 6,
            d_pca: 30,
            target: TargetMode::Joint,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and latent_dim must be positive".into(),
            ));
        }
        if let TargetMode::Single(p) = self.target {
            if p >= NUM_PROPERTIES {
                return Err(Error::InvalidConfig(format!(
                    "property index {p} out of range"
                )));
            }
        }
        self.weights.validate()
    }

    fn model_config(&self) -> CrossModalConfig {
        CrossModalConfig {
            latent_dim: self.latent_dim,
            out_dim: self.target.out_dim(),
            channels: self.channels,
            hidden: self.hidden,
            disc_feat_dim: self.disc_feat_dim,
            k: self.k,
        }
    }
}

/// Per-epoch mean of every loss component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_est: f64,
    pub l_emb: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub l_class: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedCrossModal {
    pub model: CrossModalModel,
    pub labeler: PseudoLabeler,
    pub target: TargetMode,
    pub log: Vec<EpochLog>,
    /// Image size the model was trained on.
    pub image_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct RegressionModel {
    pub store: ParamStore,
    pub enc: ConvEncoder,
    pub head: Dense,
    pub stats: TargetStats,
    pub out_dim: usize,
}

impl RegressionModel {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let feat = self.enc.forward(tape, store, x)?;
        let feat = tape.relu(feat)?;
        let pre = self.head.forward(tape, store, feat)?;
        let sig = tape.sigmoid(pre)?;
        tape.scale(sig, crate::crossmodal::model::TACTILE_MAX)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRegression {
    pub model: RegressionModel,
    pub target: TargetMode,
    pub log: Vec<EpochLog>,
    pub image_hw: (usize, usize),
}

/// Cached per-sample training data: nadir frame plus targets.
struct Prepared {
    ids: Vec<usize>,
    frames_chw: Vec<Vec<f32>>,
    targets_raw: Vec<[f32; NUM_PROPERTIES]>,
    stats: TargetStats,
    h: usize,
    w: usize,
}

fn prepare(ds: &Dataset, ids: &[usize]) -> Result<Prepared> {
    let (h, w) = (ds.manifest.image_height, ds.manifest.image_width);
    let mut frames_chw = Vec::with_capacity(ids.len());
    let mut targets_raw = Vec::with_capacity(ids.len());
    for &id in ids {
        let s = ds.sample(id);
        frames_chw.push(s.sequence.frame_chw(s.sequence.nadir_index()));
        targets_raw.push(s.target());
    }
    let rows: Vec<Vec<f32>> = targets_raw.iter().map(|t| t.to_vec()).collect();
    let stats = TargetStats::fit(&rows)?;
    Ok(Prepared {
        ids: ids.to_vec(),
        frames_chw,
        targets_raw,
        stats,
        h,
        w,
    })
}

impl Prepared {
    fn image_batch(&self, batch: &[usize]) -> Tensor {
        let plane = 3 * self.h * self.w;
        let mut data = Vec::with_capacity(batch.len() * plane);
        for &i in batch {
            data.extend_from_slice(&self.frames_chw[i]);
        }
        Tensor::new(vec![batch.len(), 3, self.h, self.w], data).expect("sized batch")
    }

    /// Standardized full tactile rows `[B, 15]`.
    fn t_std_batch(&self, batch: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(batch.len() * NUM_PROPERTIES);
        for &i in batch {
            data.extend(self.stats.standardize(&self.targets_raw[i]));
        }
        Tensor::new(vec![batch.len(), NUM_PROPERTIES], data).expect("sized batch")
    }

    /// Standardized selected-target rows `[B, out_dim]`.
    fn t_sel_batch(&self, batch: &[usize], target: TargetMode) -> Tensor {
        match target {
            TargetMode::Joint => self.t_std_batch(batch),
            TargetMode::Single(p) => {
                let data: Vec<f32> = batch
                    .iter()
                    .map(|&i| {
                        (self.targets_raw[i][p] - self.stats.mean[p]) / self.stats.std[p]
                    })
                    .collect();
                Tensor::new(vec![batch.len(), 1], data).expect("sized batch")
            }
        }
    }

    /// Selected-target mean/std vectors for standardizing estimates.
    fn sel_stats(&self, target: TargetMode) -> (Vec<f32>, Vec<f32>) {
        match target {
            TargetMode::Joint => (self.stats.mean.clone(), self.stats.std.clone()),
            TargetMode::Single(p) => (vec![self.stats.mean[p]], vec![self.stats.std[p]]),
        }
    }
}

fn filter_grads(
    grads: BTreeMap<String, Vec<f32>>,
    prefixes: &[&str],
) -> BTreeMap<String, Vec<f32>> {
    grads
        .into_iter()
        .filter(|(name, _)| prefixes.iter().any(|p| name.starts_with(p)))
        .collect()
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged(format!(
            "non-finite value in {op} at epoch {epoch}, batch {batch}"
        )),
        other => other,
    }
}

/// Standardizes raw estimate rows on the tape: `(that - mean) / std`.
fn standardize_var(
    tape: &mut Tape,
    t_raw: Var,
    mean: &[f32],
    std: &[f32],
) -> Result<Var> {
    let mean_v = tape.input(Tensor::from_vec(mean.to_vec()));
    let inv_std: Vec<f32> = std.iter().map(|&s| 1.0 / s).collect();
    let inv_v = tape.input(Tensor::from_vec(inv_std));
    let centered = tape.sub(t_raw, mean_v)?;
    tape.mul(centered, inv_v)
}

/// Trains the full cross-modal framework on the train split.
///
/// Per batch: one discriminator step on `d_loss` (skipped entirely when the
/// adversarial weight is zero), then one main step on the combined
/// objective with the generator-side adversarial term. Pseudo-labels are
/// built once before the first epoch.
pub fn train_cross_modal(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainedCrossModal> {
    cfg.validate()?;
    let prep = prepare(ds, ds.train_ids())?;
    let n = prep.ids.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty train split".into()));
    }

    let (labels, labeler) = build_pseudo_labels(
        ds,
        ds.train_ids(),
        cfg.channels,
        cfg.d_pca,
        cfg.k.min(n),
        cfg.seed,
        &prep.stats,
    )?;

    let mut model = CrossModalModel::init(
        &cfg.model_config(),
        &mut seed_stream(cfg.seed, "model-init"),
        prep.stats.clone(),
    );
    let (sel_mean, sel_std) = prep.sel_stats(cfg.target);
    let use_adv = cfg.weights.lambda_adv > 0.0;
    let use_class = cfg.weights.lambda_class > 0.0;

    let mut opt_main = Adam::new(cfg.lr);
    let mut opt_disc = Adam::new(cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut seed_stream(cfg.seed, &format!("shuffle-{epoch}")));

        let mut sums = [0.0f64; 6];
        let mut batches = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let images = prep.image_batch(batch);
            let t_std_full = prep.t_std_batch(batch);
            let t_sel = prep.t_sel_batch(batch, cfg.target);
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();

            let step = (|| -> Result<[f64; 6]> {
                let bsz = batch.len() as f32;
                let mut l_adv_d_val = 0.0f64;

                if use_adv {
                    // Detached fake estimates from the current generator.
                    let fake_z_vals = {
                        let mut tape = Tape::new();
                        let x = tape.input(images.clone());
                        let e_v = model.embed_visual_var(&mut tape, x)?;
                        let est = model.estimate_var(&mut tape, e_v)?;
                        let z = standardize_var(&mut tape, est, &sel_mean, &sel_std)?;
                        tape.value(z).clone()
                    };
                    // Discriminator step.
                    let mut tape = Tape::new();
                    let x = tape.input(images.clone());
                    let feat = model.disc_features_var(&mut tape, x)?;
                    let t_real = tape.input(t_sel.clone());
                    let t_fake = tape.input(fake_z_vals);
                    let adv = loss_adversarial(&mut tape, &model, feat, t_real, t_fake)?;
                    l_adv_d_val = tape.value(adv.d_loss).item()? as f64;
                    tape.backward(adv.d_loss)?;
                    let grads = filter_grads(tape.param_grads(), &DISC_PREFIXES);
                    opt_disc.step(&mut model.store, &grads)?;
                }

                // Main step on the combined objective.
                let mut tape = Tape::new();
                let x = tape.input(images.clone());
                let e_v = model.embed_visual_var(&mut tape, x)?;
                let t_std_in = tape.input(t_std_full.clone());
                let e_t = model.embed_tactile_var(&mut tape, t_std_in)?;
                let est = model.estimate_var(&mut tape, e_v)?;
                let est_z = standardize_var(&mut tape, est, &sel_mean, &sel_std)?;
                let t_sel_in = tape.input(t_sel.clone());

                let l_est = tape.mse(est_z, t_sel_in)?;
                let emb_sum = loss_emb(&mut tape, e_v, e_t)?;
                let l_emb = tape.scale(emb_sum, 1.0 / bsz)?;
                let l_adv_g = if use_adv {
                    let feat = model.disc_features_var(&mut tape, x)?;
                    let feat_det = tape.detach(feat);
                    let adv = loss_adversarial(&mut tape, &model, feat_det, t_sel_in, est_z)?;
                    adv.g_loss
                } else {
                    tape.input(Tensor::scalar(0.0))
                };
                let l_class = if use_class {
                    let logits = model.classify_var(&mut tape, e_v)?;
                    loss_class(&mut tape, logits, &batch_labels)?
                } else {
                    tape.input(Tensor::scalar(0.0))
                };
                let total = total_loss(&mut tape, l_est, l_emb, l_adv_g, l_class, &cfg.weights)?;

                let vals = [
                    tape.value(l_est).item()? as f64,
                    tape.value(l_emb).item()? as f64,
                    tape.value(l_adv_g).item()? as f64,
                    l_adv_d_val,
                    tape.value(l_class).item()? as f64,
                    tape.value(total).item()? as f64,
                ];
                tape.backward(total)?;
                let grads = filter_grads(tape.param_grads(), &MAIN_PREFIXES);
                opt_main.step(&mut model.store, &grads)?;
                Ok(vals)
            })()
            .map_err(|e| diverged(e, epoch, bi))?;

            for (s, v) in sums.iter_mut().zip(step) {
                *s += v;
            }
            batches += 1;
        }
        let m = batches as f64;
        log.push(EpochLog {
            epoch,
            l_est: sums[0] / m,
            l_emb: sums[1] / m,
            l_adv_g: sums[2] / m,
            l_adv_d: sums[3] / m,
            l_class: sums[4] / m,
            l_total: sums[5] / m,
        });
    }

    Ok(TrainedCrossModal {
        model,
        labeler,
        target: cfg.target,
        log,
        image_hw: (prep.h, prep.w),
    })
}

/// Trains the regression baseline: the image encoder maps straight to the
/// tactile output, with no latent constraint and no auxiliary objectives.
pub fn train_regression(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainedRegression> {
    cfg.validate()?;
    let prep = prepare(ds, ds.train_ids())?;
    let n = prep.ids.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty train split".into()));
    }
    let out_dim = cfg.target.out_dim();
    let mut store = ParamStore::new();
    let mut rng = seed_stream(cfg.seed, "model-init");
    let enc = ConvEncoder::init(&mut store, &mut rng, "reg.enc", cfg.channels, cfg.hidden);
    let head = Dense::init(&mut store, &mut rng, "reg.head", cfg.hidden, out_dim);
    let mut model = RegressionModel {
        store,
        enc,
        head,
        stats: prep.stats.clone(),
        out_dim,
    };
    let (sel_mean, sel_std) = prep.sel_stats(cfg.target);
    let mut opt = Adam::new(cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut seed_stream(cfg.seed, &format!("shuffle-{epoch}")));
        let mut sum = 0.0f64;
        let mut batches = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let images = prep.image_batch(batch);
            let t_sel = prep.t_sel_batch(batch, cfg.target);
            let val = (|| -> Result<f64> {
                let mut tape = Tape::new();
                let x = tape.input(images);
                let store_ref = model.store.clone();
                let est = model.forward(&mut tape, &store_ref, x)?;
                let est_z = standardize_var(&mut tape, est, &sel_mean, &sel_std)?;
                let t_in = tape.input(t_sel);
                let loss = tape.mse(est_z, t_in)?;
                let v = tape.value(loss).item()? as f64;
                tape.backward(loss)?;
                opt.step(&mut model.store, &tape.param_grads())?;
                Ok(v)
            })()
            .map_err(|e| diverged(e, epoch, bi))?;
            sum += val;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log.push(EpochLog {
            epoch,
            l_est: mean,
            l_emb: 0.0,
            l_adv_g: 0.0,
            l_adv_d: 0.0,
            l_class: 0.0,
            l_total: mean,
        });
    }
    Ok(TrainedRegression {
        model,
        target: cfg.target,
        log,
        image_hw: (prep.h, prep.w),
    })
}

const PREDICT_BATCH: usize = 64;

fn predict_batched<F>(ds: &Dataset, ids: &[usize], out_dim: usize, mut forward: F) -> Result<Vec<Vec<f32>>>
where
    F: FnMut(Tensor) -> Result<Vec<f32>>,
{
    let (h, w) = (ds.manifest.image_height, ds.manifest.image_width);
    let mut preds = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(PREDICT_BATCH) {
        let plane = 3 * h * w;
        let mut data = Vec::with_capacity(chunk.len() * plane);
        for &id in chunk {
            let s = ds.sample(id);
            data.extend(s.sequence.frame_chw(s.sequence.nadir_index()));
        }
        let batch = Tensor::new(vec![chunk.len(), 3, h, w], data)?;
        let flat = forward(batch)?;
        for r in 0..chunk.len() {
            preds.push(flat[r * out_dim..(r + 1) * out_dim].to_vec());
        }
    }
    Ok(preds)
}

impl TrainedCrossModal {
    /// Raw-unit predictions for the given sample ids (nadir view input).
    pub fn predict_ids(&self, ds: &Dataset, ids: &[usize]) -> Result<Vec<Vec<f32>>> {
        let out_dim = self.target.out_dim();
        predict_batched(ds, ids, out_dim, |batch| {
            let mut tape = Tape::new();
            let x = tape.input(batch);
            let e_v = self.model.embed_visual_var(&mut tape, x)?;
            let est = self.model.estimate_var(&mut tape, e_v)?;
            Ok(tape.value(est).data().to_vec())
        })
    }
}

impl TrainedRegression {
    pub fn predict_ids(&self, ds: &Dataset, ids: &[usize]) -> Result<Vec<Vec<f32>>> {
        let out_dim = self.model.out_dim;
        predict_batched(ds, ids, out_dim, |batch| {
            let mut tape = Tape::new();
            let x = tape.input(batch);
            let est = self.model.forward(&mut tape, &self.model.store, x)?;
            Ok(tape.value(est).data().to_vec())
        })
    }
}

// ── Checkpoint persistence ───────────────────────────────────────────

fn meta_tensor(kind: f32, t: &TargetMode, latent: usize, channels: [usize; 3], hidden: usize,
               disc_feat: usize, k: usize, hw: (usize, usize)) -> Tensor {
    let (mode, prop) = match t {
        TargetMode::Joint => (0.0f32, -1.0f32),
        TargetMode::Single(p) => (1.0, *p as f32),
    };
    Tensor::from_vec(vec![
        kind,
        mode,
        prop,
        latent as f32,
        channels[0] as f32,
        channels[1] as f32,
        channels[2] as f32,
        hidden as f32,
        disc_feat as f32,
        k as f32,
        hw.0 as f32,
        hw.1 as f32,
    ])
}

fn registry_tensor() -> Tensor {
    Tensor::from_vec((0..NUM_PROPERTIES as u32).map(|i| i as f32).collect())
}

const KIND_CROSSMODAL: f32 = 0.0;
const KIND_REGRESSION: f32 = 1.0;

fn push_store(ck: &mut Checkpoint, prefix: &str, store: &ParamStore) {
    for (name, t) in store.iter() {
        ck.insert(format!("{prefix}{name}"), t.clone());
    }
}

fn pull_store(ck: &Checkpoint, prefix: &str) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, t) in &ck.tensors {
        if let Some(stripped) = name.strip_prefix(prefix) {
            if !stripped.starts_with("__") {
                store.insert(stripped, t.clone());
            }
        }
    }
    store
}

fn stats_to_ck(ck: &mut Checkpoint, prefix: &str, stats: &TargetStats) {
    ck.insert(format!("{prefix}.mean"), Tensor::from_vec(stats.mean.clone()));
    ck.insert(format!("{prefix}.std"), Tensor::from_vec(stats.std.clone()));
}

fn stats_from_ck(ck: &Checkpoint, prefix: &str) -> Result<TargetStats> {
    Ok(TargetStats {
        mean: ck.require(&format!("{prefix}.mean"))?.data().to_vec(),
        std: ck.require(&format!("{prefix}.std"))?.data().to_vec(),
    })
}

impl TrainedCrossModal {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        let cfg = &self.model.cfg;
        ck.insert(
            "__meta",
            meta_tensor(
                KIND_CROSSMODAL,
                &self.target,
                cfg.latent_dim,
                cfg.channels,
                cfg.hidden,
                cfg.disc_feat_dim,
                cfg.k,
                self.image_hw,
            ),
        );
        ck.insert("__registry", registry_tensor());
        stats_to_ck(&mut ck, "__stats", &self.model.stats);
        push_store(&mut ck, "", &self.model.store);

        // Pseudo-labeler state.
        let lab = &self.labeler;
        ck.insert("__labeler.pca_mean", Tensor::from_vec(lab.pca.mean.clone()));
        let d_feat = lab.pca.mean.len();
        let comp_flat: Vec<f32> = lab.pca.components.iter().flatten().copied().collect();
        ck.insert(
            "__labeler.pca_components",
            Tensor::new(vec![lab.pca.components.len(), d_feat], comp_flat)?,
        );
        ck.insert(
            "__labeler.pca_eigenvalues",
            Tensor::from_vec(lab.pca.eigenvalues.iter().map(|&v| v as f32).collect()),
        );
        stats_to_ck(&mut ck, "__labeler.feat_stats", &lab.feat_stats);
        let cent_flat: Vec<f32> = lab.centroids.iter().flatten().copied().collect();
        let cent_dim = lab.centroids.first().map(|c| c.len()).unwrap_or(0);
        ck.insert(
            "__labeler.centroids",
            Tensor::new(vec![lab.k, cent_dim], cent_flat)?,
        );
        push_store(&mut ck, "__labeler.param.", &lab.feature_store);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta = ck.require("__meta")?.data().to_vec();
        if meta.len() < 12 || meta[0] != KIND_CROSSMODAL {
            return Err(Error::Incompatible(format!(
                "{path:?} is not a cross-modal checkpoint"
            )));
        }
        let target = if meta[1] == 0.0 {
            TargetMode::Joint
        } else {
            TargetMode::Single(meta[2] as usize)
        };
        let cfg = CrossModalConfig {
            latent_dim: meta[3] as usize,
            out_dim: target.out_dim(),
            channels: [meta[4] as usize, meta[5] as usize, meta[6] as usize],
            hidden: meta[7] as usize,
            disc_feat_dim: meta[8] as usize,
            k: meta[9] as usize,
        };
        let image_hw = (meta[10] as usize, meta[11] as usize);
        check_registry(&ck, path)?;
        let stats = stats_from_ck(&ck, "__stats")?;

        // Rebuild the module skeletons, then overwrite with stored tensors.
        let mut model = CrossModalModel::init(
            &cfg,
            &mut seed_stream(0, "checkpoint-skeleton"),
            stats,
        );
        let store = pull_store(&ck, "");
        for name in model.store.names().map(String::from).collect::<Vec<_>>() {
            let loaded = store
                .get(&name)
                .ok_or_else(|| Error::Incompatible(format!("checkpoint missing tensor `{name}`")))?;
            if loaded.shape() != model.store.get(&name).expect("known").shape() {
                return Err(Error::Incompatible(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    loaded.shape(),
                    model.store.get(&name).expect("known").shape()
                )));
            }
            model.store.insert(name, loaded.clone());
        }

        // Labeler.
        let pca_mean = ck.require("__labeler.pca_mean")?.data().to_vec();
        let comp_t = ck.require("__labeler.pca_components")?;
        let d_feat = pca_mean.len();
        let comps: Vec<Vec<f32>> = comp_t.data().chunks(d_feat).map(|c| c.to_vec()).collect();
        let eigen = ck
            .require("__labeler.pca_eigenvalues")?
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect();
        let feat_stats = stats_from_ck(&ck, "__labeler.feat_stats")?;
        let cent_t = ck.require("__labeler.centroids")?;
        let cent_dim = cent_t.shape()[1];
        let centroids: Vec<Vec<f32>> = cent_t.data().chunks(cent_dim).map(|c| c.to_vec()).collect();
        let feature_store = pull_store(&ck, "__labeler.param.");
        let labeler = PseudoLabeler {
            feature_store,
            encoder: ConvEncoder {
                prefix: "lab".into(),
                channels: cfg.channels,
                out_dim: 1,
            },
            pca: PcaBasis {
                mean: pca_mean,
                components: comps,
                eigenvalues: eigen,
            },
            feat_stats,
            tact_stats: model.stats.clone(),
            centroids,
            k: cfg.k,
        };
        Ok(TrainedCrossModal {
            model,
            labeler,
            target,
            log: Vec::new(),
            image_hw,
        })
    }
}

impl TrainedRegression {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.insert(
            "__meta",
            meta_tensor(
                KIND_REGRESSION,
                &self.target,
                0,
                self.model.enc.channels,
                self.model.enc.out_dim,
                0,
                0,
                self.image_hw,
            ),
        );
        ck.insert("__registry", registry_tensor());
        stats_to_ck(&mut ck, "__stats", &self.model.stats);
        push_store(&mut ck, "", &self.model.store);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta = ck.require("__meta")?.data().to_vec();
        if meta.len() < 12 || meta[0] != KIND_REGRESSION {
            return Err(Error::Incompatible(format!(
                "{path:?} is not a regression checkpoint"
            )));
        }
        let target = if meta[1] == 0.0 {
            TargetMode::Joint
        } else {
            TargetMode::Single(meta[2] as usize)
        };
        let channels = [meta[4] as usize, meta[5] as usize, meta[6] as usize];
        let hidden = meta[7] as usize;
        let image_hw = (meta[10] as usize, meta[11] as usize);
        check_registry(&ck, path)?;
        let stats = stats_from_ck(&ck, "__stats")?;
        let store = pull_store(&ck, "");
        let model = RegressionModel {
            store,
            enc: ConvEncoder {
                prefix: "reg.enc".into(),
                channels,
                out_dim: hidden,
            },
            head: Dense {
                prefix: "reg.head".into(),
                in_dim: hidden,
                out_dim: target.out_dim(),
            },
            stats,
            out_dim: target.out_dim(),
        };
        Ok(TrainedRegression {
            model,
            target,
            log: Vec::new(),
            image_hw,
        })
    }
}

/// Rejects checkpoints whose property order differs from the registry.
pub fn check_registry(ck: &Checkpoint, path: &Path) -> Result<()> {
    let reg = ck.require("__registry")?;
    let expect: Vec<f32> = (0..NUM_PROPERTIES as u32).map(|i| i as f32).collect();
    if reg.data() != expect.as_slice() {
        return Err(Error::Incompatible(format!(
            "{path:?}: property registry order differs from this build's registry"
        )));
    }
    Ok(())
}

/// Image size recorded in a checkpoint's metadata.
pub fn checkpoint_image_hw(ck: &Checkpoint) -> Result<(usize, usize)> {
    let meta = ck.require("__meta")?.data().to_vec();
    if meta.len() < 12 {
        return Err(Error::Incompatible("malformed checkpoint metadata".into()));
    }
    Ok((meta[10] as usize, meta[11] as usize))
}
