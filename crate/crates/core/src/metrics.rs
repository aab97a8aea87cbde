//! Evaluation metrics and report aggregation.
//!
//! All metrics accumulate in `f64` regardless of tensor precision, and all
//! per-property values are computed on raw `[0, 100]` tactile units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::registry::{PropertyRegistry, NUM_PROPERTIES};

/// Denominator guard for percentage error at near-zero ground truth.
pub const PCT_ERR_EPS: f64 = 1.0;

/// The eight properties whose median percentage errors form the top-8
/// aggregate, fixed by convention.
pub const TOP8_ACRONYMS: [&str; 8] = ["fRS", "cDF", "tCO", "cYD", "aTK", "mTX", "cCM", "cDP"];

/// Coefficient of determination against the train-split mean predictor:
/// `R^2 = 1 - sum((t - that)^2) / sum((t - tbar)^2)` where `tbar` is the
/// TRAIN mean, not the mean of the evaluated samples.
///
/// Returns `None` (undefined) when the evaluated truths all equal the train
/// mean, which zeroes the denominator.
pub fn r_squared(truth: &[f64], pred: &[f64], train_mean: f64) -> Result<Option<f64>> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "r_squared: {} truths vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::InvalidArgument(
            "r_squared needs at least 2 samples".into(),
        ));
    }
    let mut ss_res = 0.0f64;
    let mut ss_tot = 0.0f64;
    for (&t, &p) in truth.iter().zip(pred) {
        ss_res += (t - p) * (t - p);
        ss_tot += (t - train_mean) * (t - train_mean);
    }
    if ss_tot == 0.0 {
        return Ok(None);
    }
    Ok(Some(1.0 - ss_res / ss_tot))
}

/// Mean absolute error.
pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(
            "mae needs equal-length, non-empty inputs".into(),
        ));
    }
    let sum: f64 = truth.iter().zip(pred).map(|(&t, &p)| (t - p).abs()).sum();
    Ok(sum / truth.len() as f64)
}

/// Median over samples of `100 * |pred - truth| / max(truth, eps)`.
/// An even sample count takes the mean of the two middle values.
pub fn median_pct_err(truth: &[f64], pred: &[f64], eps: f64) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(
            "median_pct_err needs equal-length, non-empty inputs".into(),
        ));
    }
    let mut errs: Vec<f64> = truth
        .iter()
        .zip(pred)
        .map(|(&t, &p)| 100.0 * (p - t).abs() / t.max(eps))
        .collect();
    errs.sort_by(|a, b| a.partial_cmp(b).expect("finite percentage errors"));
    let n = errs.len();
    Ok(if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    })
}

/// Per-property metric values in registry order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PropertyMetrics {
    pub acronym: String,
    /// `None` means undefined (zero variance around the train mean).
    pub r_squared: Option<f64>,
    pub mae: f64,
    pub median_pct_err: f64,
}

/// Aggregate metric values over the fifteen properties.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Aggregates {
    pub mean_r_squared: Option<f64>,
    pub mean_mae: f64,
    pub mean_pct_err: f64,
    pub top8_pct_err: f64,
}

/// Full evaluation report: one entry per property plus the aggregates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub per_property: Vec<PropertyMetrics>,
    pub aggregates: Aggregates,
    pub num_samples: usize,
}

/// Mean of the eight fixed top-8 entries. Input maps acronym to its median
/// percentage error; every top-8 member must be present.
pub fn top8_pct_err(per_property: &[(String, f64)]) -> Result<f64> {
    let mut sum = 0.0f64;
    for want in TOP8_ACRONYMS {
        let v = per_property
            .iter()
            .find(|(a, _)| a == want)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidArgument(format!("missing property `{want}`")))?;
        sum += v;
    }
    Ok(sum / TOP8_ACRONYMS.len() as f64)
}

/// Builds a [`MetricsReport`] from per-property metrics, recomputing every
/// aggregate. Entries must cover the full registry in registry order.
pub fn aggregate_report(per_property: Vec<PropertyMetrics>, num_samples: usize) -> Result<MetricsReport> {
    let registry = PropertyRegistry::standard();
    if per_property.len() != NUM_PROPERTIES {
        return Err(Error::InvalidArgument(format!(
            "expected {NUM_PROPERTIES} property entries, got {}",
            per_property.len()
        )));
    }
    for (entry, expected) in per_property.iter().zip(registry.entries()) {
        if entry.acronym != expected.acronym {
            return Err(Error::InvalidArgument(format!(
                "property order mismatch: got `{}`, expected `{}`",
                entry.acronym, expected.acronym
            )));
        }
    }
    let mut r2_sum = 0.0f64;
    let mut r2_defined = true;
    let mut mae_sum = 0.0f64;
    let mut perr_sum = 0.0f64;
    for p in &per_property {
        match p.r_squared {
            Some(v) => r2_sum += v,
            None => r2_defined = false,
        }
        mae_sum += p.mae;
        perr_sum += p.median_pct_err;
    }
    let n = per_property.len() as f64;
    let pairs: Vec<(String, f64)> = per_property
        .iter()
        .map(|p| (p.acronym.clone(), p.median_pct_err))
        .collect();
    let aggregates = Aggregates {
        mean_r_squared: r2_defined.then_some(r2_sum / n),
        mean_mae: mae_sum / n,
        mean_pct_err: perr_sum / n,
        top8_pct_err: top8_pct_err(&pairs)?,
    };
    Ok(MetricsReport {
        per_property,
        aggregates,
        num_samples,
    })
}

/// Per-property metrics for one property's truth/prediction pairs.
pub fn property_metrics(
    acronym: &str,
    truth: &[f64],
    pred: &[f64],
    train_mean: f64,
) -> Result<PropertyMetrics> {
    Ok(PropertyMetrics {
        acronym: acronym.to_string(),
        r_squared: r_squared(truth, pred, train_mean)?,
        mae: mae(truth, pred)?,
        median_pct_err: median_pct_err(truth, pred, PCT_ERR_EPS)?,
    })
}

/// Builds a full report from raw-unit predictions over all fifteen
/// properties. `truth[sample][property]`, `pred` likewise; `train_means`
/// are the per-property means of the TRAIN split.
pub fn report_from_predictions(
    truth: &[Vec<f64>],
    pred: &[Vec<f64>],
    train_means: &[f64],
) -> Result<MetricsReport> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(
            "predictions and truths must be non-empty and parallel".into(),
        ));
    }
    if train_means.len() != NUM_PROPERTIES {
        return Err(Error::InvalidArgument(format!(
            "need {NUM_PROPERTIES} train means, got {}",
            train_means.len()
        )));
    }
    let registry = PropertyRegistry::standard();
    let mut per_property = Vec::with_capacity(NUM_PROPERTIES);
    for p in 0..NUM_PROPERTIES {
        let t: Vec<f64> = truth.iter().map(|row| row[p]).collect();
        let y: Vec<f64> = pred.iter().map(|row| row[p]).collect();
        per_property.push(property_metrics(
            registry.entry(p).acronym,
            &t,
            &y,
            train_means[p],
        )?);
    }
    aggregate_report(per_property, truth.len())
}

/// Serializes a report as a CSV table, one row per property plus an
/// aggregate row.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("property,r_squared,mae,median_pct_err\n");
    for p in &report.per_property {
        let r2 = p
            .r_squared
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "undefined".into());
        out.push_str(&format!("{},{},{:.6},{:.6}\n", p.acronym, r2, p.mae, p.median_pct_err));
    }
    let a = &report.aggregates;
    let r2 = a
        .mean_r_squared
        .map(|v| format!("{v:.6}"))
        .unwrap_or_else(|| "undefined".into());
    out.push_str(&format!(
        "mean,{},{:.6},{:.6}\ntop8_pct_err,,,{:.6}\n",
        r2, a.mean_mae, a.mean_pct_err, a.top8_pct_err
    ));
    out
}
