//! The viewpoint selector bank: M independent categorical distributions
//! over N available views, trained with policy gradients.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sampling::sample_categorical;

/// `M x N` logit matrix; each row defines one selector's distribution.
/// Rows are independent, so repeated viewpoints are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorBank {
    z: Vec<f32>,
    m: usize,
    n: usize,
}

impl SelectorBank {
    /// All-zero logits: the uniform policy.
    pub fn new_uniform(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument(
                "selector bank needs m >= 1 and n >= 1".into(),
            ));
        }
        Ok(SelectorBank {
            z: vec![0.0; m * n],
            m,
            n,
        })
    }

    pub fn from_logits(m: usize, n: usize, z: Vec<f32>) -> Result<Self> {
        if z.len() != m * n {
            return Err(Error::ShapeMismatch {
                op: "SelectorBank::from_logits".into(),
                detail: format!("expected {} logits, got {}", m * n, z.len()),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite selector logits".into()));
        }
        Ok(SelectorBank { z, m, n })
    }

    pub fn num_selectors(&self) -> usize {
        self.m
    }

    pub fn num_views(&self) -> usize {
        self.n
    }

    pub fn logits(&self) -> &[f32] {
        &self.z
    }

    fn row(&self, r: usize) -> &[f32] {
        &self.z[r * self.n..(r + 1) * self.n]
    }

    /// Softmax of one row.
    pub fn row_probabilities(&self, r: usize) -> Vec<f32> {
        softmax(self.row(r))
    }

    /// Row-wise softmax, flattened `M x N`.
    pub fn probabilities(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.m * self.n);
        for r in 0..self.m {
            out.extend(self.row_probabilities(r));
        }
        out
    }

    /// Per-row argmax of the softmax (equivalently of the logits), lowest
    /// index on ties.
    pub fn select_deterministic(&self) -> Vec<usize> {
        (0..self.m)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0usize;
                let mut best_v = row[0];
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > best_v {
                        best_v = v;
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Per-row categorical draw from the softmax distribution.
    pub fn select_stochastic(&self, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        (0..self.m)
            .map(|r| sample_categorical(&self.row_probabilities(r), rng))
            .collect()
    }

    /// One policy-gradient update:
    /// `z_r += lr * (reward - baseline) * (onehot(q_r) - softmax(z_r))`.
    pub fn reinforce_update(
        &mut self,
        q: &[usize],
        reward: f64,
        baseline: f64,
        lr: f32,
    ) -> Result<()> {
        if q.len() != self.m {
            return Err(Error::InvalidArgument(format!(
                "expected {} selected views, got {}",
                self.m,
                q.len()
            )));
        }
        if !reward.is_finite() || !baseline.is_finite() {
            return Err(Error::Numeric("non-finite reward or baseline".into()));
        }
        for (r, &qi) in q.iter().enumerate() {
            if qi >= self.n {
                return Err(Error::InvalidArgument(format!(
                    "selected view {qi} out of range for {} views",
                    self.n
                )));
            }
            let probs = self.row_probabilities(r);
            let advantage = (reward - baseline) as f32;
            let row = &mut self.z[r * self.n..(r + 1) * self.n];
            for (i, z) in row.iter_mut().enumerate() {
                let onehot = if i == qi { 1.0 } else { 0.0 };
                *z += lr * advantage * (onehot - probs[i]);
            }
        }
        Ok(())
    }
}

fn softmax(row: &[f32]) -> Vec<f32> {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f64> = row.iter().map(|&z| ((z - max) as f64).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out.into_iter().map(|v| (v as f32).max(f32::MIN_POSITIVE)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::seed_stream;
    use rand::Rng;

    #[test]
    fn one_hot_row_selects_its_index() {
        let mut z = vec![0.0f32; 10];
        z[7] = 50.0;
        let bank = SelectorBank::from_logits(1, 10, z).unwrap();
        assert_eq!(bank.select_deterministic(), vec![7]);
        // Near-degenerate distribution: the stochastic draw matches too.
        let mut rng = seed_stream(1, "sel");
        for _ in 0..50 {
            assert_eq!(bank.select_stochastic(&mut rng).unwrap(), vec![7]);
        }
    }

    #[test]
    fn all_zero_logits_tie_break_to_index_zero() {
        let bank = SelectorBank::new_uniform(3, 5).unwrap();
        assert_eq!(bank.select_deterministic(), vec![0, 0, 0]);
    }

    #[test]
    fn deterministic_matches_brute_force_over_probabilities() {
        let mut rng = seed_stream(2, "bank");
        for _ in 0..20 {
            let (m, n) = (3usize, 8usize);
            let z: Vec<f32> = (0..m * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let bank = SelectorBank::from_logits(m, n, z).unwrap();
            let picks = bank.select_deterministic();
            for r in 0..m {
                let probs = bank.row_probabilities(r);
                let brute = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                assert_eq!(picks[r], brute);
            }
        }
    }

    #[test]
    fn selection_invariant_to_constant_logit_shift() {
        let mut rng = seed_stream(3, "shift");
        for _ in 0..20 {
            let z: Vec<f32> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let bank = SelectorBank::from_logits(2, 6, z.clone()).unwrap();
            let shift: f32 = rng.gen_range(-10.0..10.0);
            let shifted: Vec<f32> = z.iter().map(|&v| v + shift).collect();
            let bank2 = SelectorBank::from_logits(2, 6, shifted).unwrap();
            assert_eq!(bank.select_deterministic(), bank2.select_deterministic());
        }
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let bank = SelectorBank::new_uniform(1, 4).unwrap();
        let mut rng = seed_stream(4, "freq");
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[bank.select_stochastic(&mut rng).unwrap()[0]] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn stochastic_draws_reproducible_per_seed() {
        let bank = SelectorBank::from_logits(2, 5, (0..10).map(|i| i as f32 / 10.0).collect())
            .unwrap();
        let draws = |seed| {
            let mut rng = seed_stream(seed, "repro");
            (0..20)
                .map(|_| bank.select_stochastic(&mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draws(9), draws(9));
    }

    #[test]
    fn reward_equal_to_baseline_leaves_bank_unchanged() {
        let mut bank = SelectorBank::from_logits(2, 4, (0..8).map(|i| i as f32).collect()).unwrap();
        let before = bank.logits().to_vec();
        bank.reinforce_update(&[1, 3], 0.7, 0.7, 0.5).unwrap();
        assert_eq!(bank.logits(), before.as_slice());
    }

    #[test]
    fn log_softmax_gradient_rows_sum_to_zero() {
        // onehot(q) - softmax(z) sums to zero per row, so an update never
        // shifts a row's logit sum.
        let mut rng = seed_stream(5, "sum");
        let z: Vec<f32> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut bank = SelectorBank::from_logits(3, 5, z).unwrap();
        let sums_before: Vec<f64> = (0..3)
            .map(|r| bank.logits()[r * 5..(r + 1) * 5].iter().map(|&v| v as f64).sum())
            .collect();
        bank.reinforce_update(&[1, 0, 4], 2.0, -1.0, 0.3).unwrap();
        for r in 0..3 {
            let after: f64 = bank.logits()[r * 5..(r + 1) * 5].iter().map(|&v| v as f64).sum();
            assert!((after - sums_before[r]).abs() < 1e-4, "row {r}");
        }
    }

    #[test]
    fn one_hot_bank_stochastic_equals_deterministic() {
        let mut z = vec![0.0f32; 12];
        z[2] = 60.0;
        z[4 + 1] = 60.0;
        z[8 + 3] = 60.0;
        let bank = SelectorBank::from_logits(3, 4, z).unwrap();
        let det = bank.select_deterministic();
        let mut rng = seed_stream(6, "onehot");
        for _ in 0..30 {
            assert_eq!(bank.select_stochastic(&mut rng).unwrap(), det);
        }
    }

    #[test]
    fn bandit_estimator_mean_matches_analytic_gradient() {
        // Two arms, rewards 1 and 0, uniform policy, fixed baseline 0.
        // E[(r - b) * d log pi / dz_0] = pi_0 (r_0 - E[r]) = 0.25.
        let bank = SelectorBank::new_uniform(1, 2).unwrap();
        let mut rng = seed_stream(7, "bandit-mean");
        let samples = 100_000;
        let mut acc = 0.0f64;
        for _ in 0..samples {
            let q = bank.select_stochastic(&mut rng).unwrap()[0];
            let reward = if q == 0 { 1.0 } else { 0.0 };
            let probs = bank.row_probabilities(0);
            // d log softmax(z)_q / dz_0 = onehot(q = 0) - p_0
            let grad0 = (if q == 0 { 1.0 } else { 0.0 }) - probs[0] as f64;
            acc += reward * grad0;
        }
        let mean = acc / samples as f64;
        let analytic = 0.25;
        assert!(
            (mean - analytic).abs() / analytic < 0.05,
            "estimator mean {mean} vs analytic {analytic}"
        );
    }

    #[test]
    fn bandit_converges_to_better_arm() {
        // Rewards {arm 0: 1, arm 1: 0}, EMA baseline, lr 0.1: the policy
        // exceeds p(arm 0) > 0.99 within 2000 updates.
        let mut bank = SelectorBank::new_uniform(1, 2).unwrap();
        let mut rng = seed_stream(8, "bandit-conv");
        let mut baseline = 0.0f64;
        let mut initialized = false;
        for _ in 0..2000 {
            let q = bank.select_stochastic(&mut rng).unwrap();
            let reward = if q[0] == 0 { 1.0 } else { 0.0 };
            if !initialized {
                baseline = reward;
                initialized = true;
            }
            bank.reinforce_update(&q, reward, baseline, 0.1).unwrap();
            baseline = 0.9 * baseline + 0.1 * reward;
        }
        let p0 = bank.row_probabilities(0)[0];
        assert!(p0 > 0.99, "p(arm 0) = {p0}");
    }
}
