//! Visuo-tactile pseudo-labels: cluster indices over concatenated
//! (PCA-reduced visual features, tactile vectors), used as the auxiliary
//! classification target.
//!
//! Features come from one image per sample (the most nadir view) through a
//! frozen randomly initialized encoder trunk: no pretrained backbone exists
//! at desk scale, and only the relative geometry of the features matters
//! for clustering.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::crossmodal::kmeans::{kmeans, nearest_centroid};
use crate::crossmodal::pca::{fit_pca, PcaBasis};
use crate::crossmodal::stats::TargetStats;
use crate::error::{Error, Result};
use crate::nn::ConvEncoder;
use crate::optim::ParamStore;
use crate::synth::format::Dataset;
use crate::synth::registry::NUM_PROPERTIES;
use crate::tensor::Tensor;

/// Frozen state of the pseudo-label pipeline, persisted with checkpoints.
#[derive(Debug, Clone)]
pub struct PseudoLabeler {
    /// Frozen feature extractor (encoder trunk parameters).
    pub feature_store: ParamStore,
    pub encoder: ConvEncoder,
    pub pca: PcaBasis,
    /// Standardization of the PCA coordinates.
    pub feat_stats: TargetStats,
    /// Standardization of the tactile vectors (train-split stats).
    pub tact_stats: TargetStats,
    pub centroids: Vec<Vec<f32>>,
    pub k: usize,
}

impl PseudoLabeler {
    /// Joint representation for one sample: standardized PCA coordinates
    /// of the visual features concatenated with the standardized tactile
    /// vector.
    pub fn joint_vector(&self, feature: &[f32], tactile: &[f32; NUM_PROPERTIES]) -> Vec<f32> {
        let mut v = self.feat_stats.standardize(&self.pca.project(feature));
        v.extend(self.tact_stats.standardize(tactile));
        v
    }

    /// Hard label for one sample.
    pub fn assign(&self, feature: &[f32], tactile: &[f32; NUM_PROPERTIES]) -> usize {
        nearest_centroid(&self.joint_vector(feature, tactile), &self.centroids)
    }

    /// Extracts the frozen trunk features for one image (`[3, H, W]` data).
    pub fn extract_feature(&self, image_chw: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, 3, h, w], image_chw.to_vec())?);
        let f = self.encoder.trunk(&mut tape, &self.feature_store, x)?;
        Ok(tape.value(f).data().to_vec())
    }
}

/// Builds pseudo-labels for the given sample ids.
///
/// Returns the labels (parallel to `ids`) and the fitted labeler. The
/// result is invariant to the ordering of `ids`: clustering runs over a
/// canonical sort of the joint vectors.
pub fn build_pseudo_labels(
    dataset: &Dataset,
    ids: &[usize],
    channels: [usize; 3],
    d_pca: usize,
    k: usize,
    seed: u64,
    tact_stats: &TargetStats,
) -> Result<(Vec<usize>, PseudoLabeler)> {
    if ids.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need at least k = {k} samples, got {}",
            ids.len()
        )));
    }
    let (h, w) = (dataset.manifest.image_height, dataset.manifest.image_width);

    // Frozen random-init trunk. The head is initialized but unused.
    let mut feature_store = ParamStore::new();
    let mut init_rng: ChaCha8Rng = crate::sampling::seed_stream(seed, "labeler-encoder");
    let encoder = ConvEncoder::init(&mut feature_store, &mut init_rng, "lab", channels, 1);

    let mut features: Vec<Vec<f32>> = Vec::with_capacity(ids.len());
    let mut tactiles: Vec<[f32; NUM_PROPERTIES]> = Vec::with_capacity(ids.len());
    for &id in ids {
        let sample = dataset.sample(id);
        let nadir = sample.sequence.nadir_index();
        let chw = sample.sequence.frame_chw(nadir);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, 3, h, w], chw)?);
        let f = encoder.trunk(&mut tape, &feature_store, x)?;
        features.push(tape.value(f).data().to_vec());
        tactiles.push(sample.target());
    }

    let pca = fit_pca(&features, d_pca)?;
    let projected: Vec<Vec<f32>> = features.iter().map(|f| pca.project(f)).collect();
    let feat_stats = TargetStats::fit(&projected)?;

    let joint: Vec<Vec<f32>> = projected
        .iter()
        .zip(&tactiles)
        .map(|(p, t)| {
            let mut v = feat_stats.standardize(p);
            v.extend(tact_stats.standardize(t));
            v
        })
        .collect();

    // Canonical order: sort indices by the joint vector bytes so the
    // clustering outcome does not depend on sample ordering.
    let mut order: Vec<usize> = (0..joint.len()).collect();
    order.sort_by(|&a, &b| {
        joint[a]
            .iter()
            .map(|v| v.to_bits())
            .cmp(joint[b].iter().map(|v| v.to_bits()))
    });
    let sorted: Vec<Vec<f32>> = order.iter().map(|&i| joint[i].clone()).collect();

    let mut km_rng = crate::sampling::seed_stream(seed, "labeler-kmeans");
    let result = kmeans(&sorted, k, &mut km_rng, 100, 1e-6)?;

    let mut labels = vec![0usize; joint.len()];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = result.labels[pos];
    }

    let labeler = PseudoLabeler {
        feature_store,
        encoder,
        pca,
        feat_stats,
        tact_stats: tact_stats.clone(),
        centroids: result.centroids,
        k,
    };
    Ok((labels, labeler))
}
