//! Lloyd's algorithm with k-means++ initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Clustering outcome: centroids, hard assignments, and the inertia after
/// every assignment step (a non-increasing sequence).
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub inertia_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().expect("at least one iteration")
    }
}

fn dist_sq(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = (x - y) as f64;
        acc += d * d;
    }
    acc
}

/// Nearest centroid index, lowest index on ties.
pub fn nearest_centroid(point: &[f32], centroids: &[Vec<f32>]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist_sq(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn kmeanspp_init(data: &[Vec<f32>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let n = data.len();
    let mut centroids: Vec<Vec<f32>> = Vec::with_capacity(k);
    centroids.push(data[rng.gen_range(0..n)].clone());
    let mut dists: Vec<f64> = data.iter().map(|p| dist_sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().sum();
        let idx = if total <= 0.0 {
            // All points coincide with existing centroids.
            rng.gen_range(0..n)
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dists.iter().enumerate() {
                u -= d;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(data[idx].clone());
        for (i, p) in data.iter().enumerate() {
            let d = dist_sq(p, centroids.last().expect("just pushed"));
            if d < dists[i] {
                dists[i] = d;
            }
        }
    }
    centroids
}

/// Runs k-means++ initialized Lloyd iterations.
///
/// Stops when the relative inertia change drops below `rel_tol`, the
/// assignments stop changing, or `max_iter` assignment steps have run.
/// An empty cluster is re-seeded at the point farthest from its assigned
/// centroid.
pub fn kmeans(
    data: &[Vec<f32>],
    k: usize,
    rng: &mut ChaCha8Rng,
    max_iter: usize,
    rel_tol: f64,
) -> Result<KMeansResult> {
    let n = data.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of points ({n})"
        )));
    }
    let d = data[0].len();
    for row in data {
        if row.len() != d {
            return Err(Error::InvalidArgument("points must share one dimension".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in clustering input".into()));
        }
    }

    let mut centroids = kmeanspp_init(data, k, rng);
    // Sentinel assignments so the first pass always counts as a change.
    let mut labels = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    let mut prev_inertia = f64::INFINITY;

    for _iter in 0..max_iter.max(1) {
        // Assignment step.
        let mut inertia = 0.0f64;
        let mut changed = false;
        for (i, p) in data.iter().enumerate() {
            let c = nearest_centroid(p, &centroids);
            inertia += dist_sq(p, &centroids[c]);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        inertia_trace.push(inertia);
        let rel_change = if prev_inertia.is_finite() && prev_inertia > 0.0 {
            (prev_inertia - inertia) / prev_inertia
        } else {
            f64::INFINITY
        };
        if !changed || rel_change.abs() < rel_tol {
            break;
        }
        prev_inertia = inertia;

        // Update step.
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in data.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, &v) in sums[labels[i]].iter_mut().zip(p) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|&s| (s / counts[c] as f64) as f32).collect();
            } else {
                // Re-seed the empty cluster at the point farthest from its
                // assigned centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist_sq(&data[a], &centroids[labels[a]])
                            .partial_cmp(&dist_sq(&data[b], &centroids[labels[b]]))
                            .expect("finite distances")
                    })
                    .expect("non-empty data");
                centroids[c] = data[far].clone();
            }
        }
    }
    Ok(KMeansResult {
        centroids,
        labels,
        inertia_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::seed_stream;
    use rand::Rng;

    #[test]
    fn two_separated_blobs_recovered_exactly() {
        // Separation far above the within-blob spread recovers membership
        // up to label permutation.
        let mut rng = seed_stream(3, "blobs");
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let center = if i % 2 == 0 { 0.0f32 } else { 30.0 };
            truth.push(i % 2);
            data.push(vec![
                center + rng.gen_range(-1.0..1.0),
                center + rng.gen_range(-1.0..1.0),
            ]);
        }
        let res = kmeans(&data, 2, &mut seed_stream(4, "km"), 100, 1e-6).unwrap();
        let flip = res.labels[0] != truth[0];
        for (l, &t) in res.labels.iter().zip(&truth) {
            let mapped = if flip { 1 - *l } else { *l };
            assert_eq!(mapped, t);
        }
    }

    #[test]
    fn k_one_gives_single_label_and_mean_centroid() {
        let data = vec![
            vec![1.0f32, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 0.0],
        ];
        let res = kmeans(&data, 1, &mut seed_stream(5, "km"), 100, 1e-6).unwrap();
        assert!(res.labels.iter().all(|&l| l == 0));
        assert!((res.centroids[0][0] - 3.0).abs() < 1e-6);
        assert!((res.centroids[0][1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn inertia_non_increasing_on_random_fixtures() {
        for seed in 0..5u64 {
            let mut rng = seed_stream(seed, "fixture");
            let data: Vec<Vec<f32>> = (0..120)
                .map(|_| (0..6).map(|_| rng.gen_range(-5.0f32..5.0)).collect())
                .collect();
            let res = kmeans(&data, 7, &mut seed_stream(seed, "km"), 100, 0.0).unwrap();
            for pair in res.inertia_trace.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-9,
                    "seed {seed}: inertia rose {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn k_larger_than_n_rejected() {
        let data = vec![vec![0.0f32], vec![1.0]];
        assert!(kmeans(&data, 3, &mut seed_stream(1, "km"), 10, 1e-6).is_err());
        assert!(kmeans(&data, 0, &mut seed_stream(1, "km"), 10, 1e-6).is_err());
    }

    #[test]
    fn identical_points_with_multiple_clusters_terminate() {
        let data = vec![vec![2.0f32, 2.0]; 8];
        let res = kmeans(&data, 3, &mut seed_stream(9, "km"), 100, 1e-6).unwrap();
        assert_eq!(res.labels.len(), 8);
        assert!(res.inertia() < 1e-12);
    }
}
