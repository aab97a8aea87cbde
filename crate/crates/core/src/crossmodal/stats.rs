//! Per-property standardization statistics fitted on the train split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STD_GUARD: f32 = 1e-3;

/// Per-dimension mean and standard deviation used to z-score tactile
/// targets. Metrics are always reported back in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl TargetStats {
    /// Fits mean/std per dimension (population std, guarded away from 0).
    pub fn fit(rows: &[Vec<f32>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no rows to fit statistics on".into()));
        }
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0f64; d];
        for row in rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0f64; d];
        for row in rows {
            for i in 0..d {
                let dv = row[i] as f64 - mean[i];
                var[i] += dv * dv;
            }
        }
        let std: Vec<f32> = var
            .iter()
            .map(|&v| ((v / n).sqrt() as f32).max(STD_GUARD))
            .collect();
        Ok(TargetStats {
            mean: mean.into_iter().map(|v| v as f32).collect(),
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, raw: &[f32]) -> Vec<f32> {
        raw.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i]) / self.std[i])
            .collect()
    }

    pub fn unstandardize(&self, z: &[f32]) -> Vec<f32> {
        z.iter()
            .enumerate()
            .map(|(i, &v)| v * self.std[i] + self.mean[i])
            .collect()
    }
}
