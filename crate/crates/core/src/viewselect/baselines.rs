//! Non-learned view sampling schemes and feature fusion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `M` i.i.d. uniform view indices; repeats allowed, matching the freedom
/// of the learned policy.
pub fn sample_random(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..m).map(|_| rng.gen_range(0..n)).collect()
}

/// Views at fixed intervals: `q_m = round(m * (N-1) / (M-1))`, rounding
/// half away from zero; a single view picks the middle index.
pub fn sample_equidistant(n: usize, m: usize) -> Vec<usize> {
    if m == 1 {
        return vec![(n - 1) / 2];
    }
    (0..m)
        .map(|i| ((i * (n - 1)) as f64 / (m - 1) as f64).round() as usize)
        .collect()
}

/// Configuration for random-subset sampling.
#[derive(Debug, Clone, Copy)]
pub struct SubsetConfig {
    /// Largest subset size; sizes are drawn uniformly from `2..=max_size`.
    pub max_size: usize,
    /// Number of subsets to draw.
    pub count: usize,
}

/// Random subsets of various lengths: each subset has a size drawn
/// uniformly from `{2..max_size}` and distinct, ascending view indices.
pub fn sample_trn_subsets(
    n: usize,
    cfg: &SubsetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if cfg.max_size < 2 || cfg.max_size > n {
        return Err(Error::InvalidArgument(format!(
            "subset max_size must lie in [2, {n}], got {}",
            cfg.max_size
        )));
    }
    let mut out = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let size = rng.gen_range(2..=cfg.max_size);
        // Partial Fisher-Yates over the index pool gives `size` distinct picks.
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..size {
            let j = rng.gen_range(i..n);
            pool.swap(i, j);
        }
        let mut subset: Vec<usize> = pool[..size].to_vec();
        subset.sort_unstable();
        out.push(subset);
    }
    Ok(out)
}

/// How per-view feature vectors combine before the prediction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Concatenation in selector order (order-sensitive).
    Concat,
    /// Elementwise max (order-invariant).
    MaxPool,
}

/// Plain-data fusion of equal-length feature vectors.
pub fn fuse_views(features: &[Vec<f32>], mode: FusionMode) -> Result<Vec<f32>> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("fuse_views needs at least one vector".into()));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::ShapeMismatch {
            op: "fuse_views".into(),
            detail: "feature vectors must share one length".into(),
        });
    }
    Ok(match mode {
        FusionMode::Concat => features.iter().flatten().copied().collect(),
        FusionMode::MaxPool => {
            let mut out = features[0].clone();
            for f in &features[1..] {
                for (o, &v) in out.iter_mut().zip(f) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
            out
        }
    })
}
