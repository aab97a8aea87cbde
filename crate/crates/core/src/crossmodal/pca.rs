//! Principal component analysis via Jacobi eigendecomposition of the
//! covariance matrix. Deterministic: no randomness, canonical eigenvector
//! signs, stable eigenvalue ordering.

use crate::error::{Error, Result};

/// A fitted PCA basis: feature mean plus orthonormal component rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f32>,
    /// `num_components x dim`, rows orthonormal, sorted by explained
    /// variance (descending).
    pub components: Vec<Vec<f32>>,
    pub eigenvalues: Vec<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Projects a vector onto the component rows.
    pub fn project(&self, x: &[f32]) -> Vec<f32> {
        self.components
            .iter()
            .map(|c| {
                let mut acc = 0.0f64;
                for i in 0..self.mean.len() {
                    acc += (x[i] - self.mean[i]) as f64 * c[i] as f64;
                }
                acc as f32
            })
            .collect()
    }

    /// Reconstructs from a projection (mean + weighted component rows).
    pub fn reconstruct(&self, proj: &[f32]) -> Vec<f32> {
        let mut out: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (p, c) in proj.iter().zip(&self.components) {
            for i in 0..out.len() {
                out[i] += *p as f64 * c[i] as f64;
            }
        }
        out.into_iter().map(|v| v as f32).collect()
    }

    /// Max absolute deviation of the component Gram matrix from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.components.len();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in i..k {
                let mut dot = 0.0f64;
                for d in 0..self.mean.len() {
                    dot += self.components[i][d] as f64 * self.components[j][d] as f64;
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Fits PCA on row vectors. `num_components` is clamped to
/// `min(requested, dim, rows)`.
pub fn fit_pca(data: &[Vec<f32>], num_components: usize) -> Result<PcaBasis> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 rows".into()));
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("PCA rows must share a non-zero dim".into()));
    }
    let k = num_components.min(d).min(n);

    let mut mean = vec![0.0f64; d];
    for row in data {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Covariance (d x d), symmetric.
    let mut cov = vec![0.0f64; d * d];
    for row in data {
        for i in 0..d {
            let ci = row[i] as f64 - mean[i];
            for j in i..d {
                cov[i * d + j] += ci * (row[j] as f64 - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(&mut cov, d);

    // Order by eigenvalue descending (stable), canonical signs.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).expect("finite"));
    let mut components = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for &col in order.iter().take(k) {
        let mut comp: Vec<f64> = (0..d).map(|r| eigenvectors[r * d + col]).collect();
        let lead = comp
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
            .map(|(_, v)| v)
            .unwrap_or(1.0);
        if lead < 0.0 {
            for c in &mut comp {
                *c = -*c;
            }
        }
        components.push(comp.into_iter().map(|v| v as f32).collect());
        values.push(eigenvalues[col]);
    }
    Ok(PcaBasis {
        mean: mean.into_iter().map(|v| v as f32).collect(),
        components,
        eigenvalues: values,
    })
}

/// Cyclic Jacobi rotations on a symmetric matrix. Returns (eigenvalues,
/// column eigenvectors).
fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a[i * d + p];
                    let aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[p * d + j];
                    let aqj = a[q * d + j];
                    a[p * d + j] = c * apj - s * aqj;
                    a[q * d + j] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    let values: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (values, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = crate::sampling::seed_stream(seed, "pca");
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn components_are_orthonormal() {
        let data = random_rows(60, 8, 5);
        let pca = fit_pca(&data, 6).unwrap();
        assert!(pca.orthonormality_error() < 1e-5, "{}", pca.orthonormality_error());
    }

    #[test]
    fn first_component_captures_dominant_axis() {
        // Points on a line y = 2x plus tiny noise: the leading component
        // aligns with (1, 2)/sqrt(5).
        let mut rng = crate::sampling::seed_stream(6, "line");
        let data: Vec<Vec<f32>> = (0..200)
            .map(|_| {
                let t: f32 = rng.gen_range(-3.0..3.0);
                let eps: f32 = rng.gen_range(-0.01..0.01);
                vec![t, 2.0 * t + eps]
            })
            .collect();
        let pca = fit_pca(&data, 1).unwrap();
        let c = &pca.components[0];
        let expect = [1.0 / 5.0f32.sqrt(), 2.0 / 5.0f32.sqrt()];
        for (a, b) in c.iter().zip(&expect) {
            assert!((a.abs() - b).abs() < 1e-3, "component {c:?}");
        }
    }

    #[test]
    fn reconstruction_error_non_increasing_in_components() {
        let data = random_rows(40, 10, 9);
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let pca = fit_pca(&data, k).unwrap();
            let err: f64 = data
                .iter()
                .map(|row| {
                    let rec = pca.reconstruct(&pca.project(row));
                    row.iter()
                        .zip(&rec)
                        .map(|(&a, &b)| ((a - b) as f64).powi(2))
                        .sum::<f64>()
                })
                .sum();
            assert!(
                err <= last + 1e-9,
                "error increased at k={k}: {err} > {last}"
            );
            last = err;
        }
        assert!(last < 1e-6, "full-rank reconstruction should be exact, got {last}");
    }

    #[test]
    fn deterministic_and_order_invariant() {
        let data = random_rows(30, 6, 11);
        let a = fit_pca(&data, 4).unwrap();
        let b = fit_pca(&data, 4).unwrap();
        assert_eq!(a, b);
        let mut reversed = data.clone();
        reversed.reverse();
        let c = fit_pca(&reversed, 4).unwrap();
        for (x, y) in a.components.iter().zip(&c.components) {
            for (&p, &q) in x.iter().zip(y) {
                assert!((p - q).abs() < 1e-5);
            }
        }
    }
}
