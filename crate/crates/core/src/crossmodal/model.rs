//! The cross-modal translation model: separate visual and tactile encoders
//! into a shared latent space, a tactile generator head, an auxiliary
//! visuo-tactile classifier, and a conditional discriminator with its own
//! lightweight image feature encoder.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::crossmodal::stats::TargetStats;
use crate::error::{Error, Result};
use crate::nn::{Act, ConvEncoder, Mlp};
use crate::optim::ParamStore;
use crate::synth::registry::NUM_PROPERTIES;
use crate::tensor::Tensor;

/// Output scaling of the tactile generator: sigmoid times this bound.
pub const TACTILE_MAX: f32 = 100.0;

/// Weights of the combined objective
/// `L = L_est + l1 * L_emb + l2 * L_adv + l3 * L_class`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_emb: f32,
    pub lambda_adv: f32,
    pub lambda_class: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        // L_est dominates early with these defaults.
        LossWeights {
            lambda_emb: 1.0,
            lambda_adv: 0.1,
            lambda_class: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zeros() -> Self {
        LossWeights {
            lambda_emb: 0.0,
            lambda_adv: 0.0,
            lambda_class: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_emb", self.lambda_emb),
            ("lambda_adv", self.lambda_adv),
            ("lambda_class", self.lambda_class),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a nonnegative real, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModalConfig {
    /// Shared latent dimension (50 in single-image mode).
    pub latent_dim: usize,
    /// Tactile output width: 15 in joint mode, 1 in per-property mode.
    pub out_dim: usize,
    pub channels: [usize; 3],
    pub hidden: usize,
    /// Width of the discriminator's image feature vector.
    pub disc_feat_dim: usize,
    /// Pseudo-label cluster count.
    pub k: usize,
}

impl Default for CrossModalConfig {
    fn default() -> Self {
        CrossModalConfig {
            latent_dim: 50,
            out_dim: NUM_PROPERTIES,
            channels: crate::nn::DEFAULT_CHANNELS,
            hidden: 64,
            disc_feat_dim: 32,
            k: 6,
        }
    }
}

/// Parameter sets for the full framework. Prefixes: `ev` (visual encoder),
/// `et` (tactile encoder), `gt` (generator), `cvt` (classifier), `fd`
/// (discriminator feature encoder), `d` (discriminator).
#[derive(Debug, Clone)]
pub struct CrossModalModel {
    pub store: ParamStore,
    pub e_v: ConvEncoder,
    pub e_t: Mlp,
    pub g_t: Mlp,
    pub c_vt: Mlp,
    pub f_d: ConvEncoder,
    pub d: Mlp,
    pub cfg: CrossModalConfig,
    /// Train-split standardization of tactile targets.
    pub stats: TargetStats,
}

/// Parameter-name prefixes updated by the main (generator-side) step.
pub const MAIN_PREFIXES: [&str; 4] = ["ev.", "et.", "gt.", "cvt."];
/// Parameter-name prefixes updated by the discriminator step.
pub const DISC_PREFIXES: [&str; 2] = ["fd.", "d."];

impl CrossModalModel {
    pub fn init(cfg: &CrossModalConfig, rng: &mut ChaCha8Rng, stats: TargetStats) -> Self {
        let mut store = ParamStore::new();
        let e_v = ConvEncoder::init(&mut store, rng, "ev", cfg.channels, cfg.latent_dim);
        let e_t = Mlp::init(
            &mut store,
            rng,
            "et",
            &[NUM_PROPERTIES, cfg.hidden, cfg.latent_dim],
            Act::Relu,
            Act::None,
        );
        let g_t = Mlp::init(
            &mut store,
            rng,
            "gt",
            &[cfg.latent_dim, cfg.hidden, cfg.out_dim],
            Act::Relu,
            Act::None,
        );
        let c_vt = Mlp::init(
            &mut store,
            rng,
            "cvt",
            &[cfg.latent_dim, cfg.hidden, cfg.k],
            Act::Relu,
            Act::None,
        );
        let f_d = ConvEncoder::init(&mut store, rng, "fd", cfg.channels, cfg.disc_feat_dim);
        let d = Mlp::init(
            &mut store,
            rng,
            "d",
            &[cfg.disc_feat_dim + cfg.out_dim, cfg.hidden, 1],
            Act::Relu,
            Act::Sigmoid,
        );
        CrossModalModel {
            store,
            e_v,
            e_t,
            g_t,
            c_vt,
            f_d,
            d,
            cfg: cfg.clone(),
            stats,
        }
    }

    /// Embeds a batch of images `[B, 3, H, W]` into the latent space.
    pub fn embed_visual_var(&self, tape: &mut Tape, images: Var) -> Result<Var> {
        self.e_v.forward(tape, &self.store, images)
    }

    /// Embeds one image (`[3, H, W]` data in `[0, 1]`), validating range.
    pub fn embed_visual(&self, image_chw: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
        if image_chw.len() != 3 * h * w {
            return Err(Error::ShapeMismatch {
                op: "embed_visual".into(),
                detail: format!("expected {} values, got {}", 3 * h * w, image_chw.len()),
            });
        }
        if image_chw.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "image values must lie in [0, 1]".into(),
            ));
        }
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, 3, h, w], image_chw.to_vec())?);
        let e = self.embed_visual_var(&mut tape, x)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Embeds standardized tactile rows `[B, 15]` into the latent space.
    pub fn embed_tactile_var(&self, tape: &mut Tape, t_std: Var) -> Result<Var> {
        self.e_t.forward(tape, &self.store, t_std)
    }

    /// Embeds one raw tactile vector in `[0, 100]` (standardized internally
    /// with the train-split stats), validating range.
    pub fn embed_tactile(&self, t_raw: &[f32]) -> Result<Vec<f32>> {
        if t_raw.len() != NUM_PROPERTIES {
            return Err(Error::ShapeMismatch {
                op: "embed_tactile".into(),
                detail: format!("expected {NUM_PROPERTIES} values, got {}", t_raw.len()),
            });
        }
        if t_raw.iter().any(|&v| !(0.0..=100.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "tactile values must lie in [0, 100]".into(),
            ));
        }
        let mut tape = Tape::new();
        let z = tape.input(Tensor::from_vec(self.stats.standardize(t_raw)));
        let e = self.embed_tactile_var(&mut tape, z)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Tactile estimate from a latent batch, raw units in `[0, TACTILE_MAX]`.
    pub fn estimate_var(&self, tape: &mut Tape, latent: Var) -> Result<Var> {
        let pre = self.g_t.forward(tape, &self.store, latent)?;
        let sig = tape.sigmoid(pre)?;
        tape.scale(sig, TACTILE_MAX)
    }

    /// Classifier logits from a latent batch.
    pub fn classify_var(&self, tape: &mut Tape, latent: Var) -> Result<Var> {
        self.c_vt.forward(tape, &self.store, latent)
    }

    /// Discriminator probability for (image features, tactile rows).
    pub fn discriminate_var(&self, tape: &mut Tape, feat: Var, tactile: Var) -> Result<Var> {
        let joint = tape.concat(&[feat, tactile], 1)?;
        self.d.forward(tape, &self.store, joint)
    }

    /// Discriminator image features `[B, disc_feat_dim]`.
    pub fn disc_features_var(&self, tape: &mut Tape, images: Var) -> Result<Var> {
        self.f_d.forward(tape, &self.store, images)
    }
}

/// Embedding constraint `L_emb = ||e_t - e_v||_2^2` (summed over all
/// entries; divide by the batch size for a per-sample mean).
pub fn loss_emb(tape: &mut Tape, e_v: Var, e_t: Var) -> Result<Var> {
    tape.sum_sq_diff(e_t, e_v)
}

/// Both sides of the adversarial objective for one batch.
///
/// `d_loss  = bce(D(f, t_real), 1) + bce(D(f, t_fake), 0)`
/// `g_loss  = bce(D(f, t_fake), 1) + mean_rows ||t_fake - t_real||_2`
///
/// The generator term uses the non-saturating form; the second summand is
/// the paired L2 pull toward the real vectors. Probabilities are clamped
/// inside the cross-entropy. `t_real`/`t_fake` are standardized rows; for
/// the discriminator step pass a detached `t_fake`.
pub struct AdversarialLosses {
    pub d_loss: Var,
    pub g_loss: Var,
}

pub fn loss_adversarial(
    tape: &mut Tape,
    model: &CrossModalModel,
    feat: Var,
    t_real: Var,
    t_fake: Var,
) -> Result<AdversarialLosses> {
    let rows = match tape.shape(t_real) {
        [r, _] => *r,
        [_] => 1,
        s => {
            return Err(Error::ShapeMismatch {
                op: "loss_adversarial".into(),
                detail: format!("tactile rows must be rank 1 or 2, got {s:?}"),
            })
        }
    };
    let p_real = model.discriminate_var(tape, feat, t_real)?;
    let p_fake = model.discriminate_var(tape, feat, t_fake)?;
    let ones = tape.input(Tensor::filled(tape.shape(p_real).to_vec(), 1.0));
    let zeros = tape.input(Tensor::filled(tape.shape(p_fake).to_vec(), 0.0));
    let l_real = tape.bce(p_real, ones)?;
    let l_fake = tape.bce(p_fake, zeros)?;
    let d_loss = tape.add(l_real, l_fake)?;

    let l_fool = tape.bce(p_fake, ones)?;
    let l_pull = tape.pair_dist_mean(t_fake, t_real)?;
    let g_loss = tape.add(l_fool, l_pull)?;
    let _ = rows;
    Ok(AdversarialLosses { d_loss, g_loss })
}

/// Auxiliary classification loss: categorical cross-entropy of the
/// classifier logits against pseudo-labels.
pub fn loss_class(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cce(logits, labels)
}

/// Combined objective `L_est + l1 L_emb + l2 L_adv + l3 L_class`.
pub fn total_loss(
    tape: &mut Tape,
    l_est: Var,
    l_emb: Var,
    l_adv: Var,
    l_class: Var,
    weights: &LossWeights,
) -> Result<Var> {
    weights.validate()?;
    let mut total = l_est;
    let e = tape.scale(l_emb, weights.lambda_emb)?;
    total = tape.add(total, e)?;
    let a = tape.scale(l_adv, weights.lambda_adv)?;
    total = tape.add(total, a)?;
    let c = tape.scale(l_class, weights.lambda_class)?;
    total = tape.add(total, c)?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::seed_stream;

    fn identity_stats() -> TargetStats {
        TargetStats {
            mean: vec![50.0; NUM_PROPERTIES],
            std: vec![25.0; NUM_PROPERTIES],
        }
    }

    fn tiny_model(seed: u64) -> CrossModalModel {
        let cfg = CrossModalConfig {
            latent_dim: 6,
            out_dim: NUM_PROPERTIES,
            channels: [4, 4, 8],
            hidden: 8,
            disc_feat_dim: 5,
            k: 3,
        };
        CrossModalModel::init(&cfg, &mut seed_stream(seed, "model"), identity_stats())
    }

    #[test]
    fn embed_visual_zero_head_gives_zero_vector() {
        let mut m = tiny_model(1);
        m.store.insert("ev.head.w", Tensor::zeros(vec![8, 6]));
        let img = vec![0.0f32; 3 * 8 * 8];
        let e = m.embed_visual(&img, 8, 8).unwrap();
        assert_eq!(e, vec![0.0; 6]);
    }

    #[test]
    fn embeddings_deterministic_and_distinct_inputs_differ() {
        let m = tiny_model(2);
        let mut rng = seed_stream(3, "imgs");
        use rand::Rng;
        let a: Vec<f32> = (0..192).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f32> = (0..192).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ea1 = m.embed_visual(&a, 8, 8).unwrap();
        let ea2 = m.embed_visual(&a, 8, 8).unwrap();
        let eb = m.embed_visual(&b, 8, 8).unwrap();
        assert_eq!(ea1, ea2);
        assert_ne!(ea1, eb);
    }

    #[test]
    fn embed_tactile_validates_range_and_is_deterministic() {
        let m = tiny_model(4);
        let t = vec![50.0f32; NUM_PROPERTIES];
        assert_eq!(m.embed_tactile(&t).unwrap(), m.embed_tactile(&t).unwrap());
        let mut bad = t.clone();
        bad[3] = 101.0;
        assert!(m.embed_tactile(&bad).is_err());
        let mut one = t.clone();
        one[0] = 51.0;
        assert_ne!(m.embed_tactile(&t).unwrap(), m.embed_tactile(&one).unwrap());
    }

    #[test]
    fn loss_emb_zero_iff_equal_and_closed_form() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![1.0, 0.0]));
        let b = tape.input(Tensor::from_vec(vec![0.0, 1.0]));
        let l = loss_emb(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 2.0);
        let l_same = loss_emb(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(l_same).item().unwrap(), 0.0);
    }

    #[test]
    fn loss_emb_symmetric_matches_direct_arithmetic() {
        use rand::Rng;
        let mut rng = seed_stream(5, "emb");
        let av: Vec<f32> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bv: Vec<f32> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let expected: f64 = av
            .iter()
            .zip(&bv)
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum();
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(av.clone()));
        let b = tape.input(Tensor::from_vec(bv.clone()));
        let ab = loss_emb(&mut tape, a, b).unwrap();
        let ba = loss_emb(&mut tape, b, a).unwrap();
        let vab = tape.value(ab).item().unwrap() as f64;
        let vba = tape.value(ba).item().unwrap() as f64;
        assert!((vab - expected).abs() < 1e-4);
        assert!((vab - vba).abs() < 1e-9);
    }

    #[test]
    fn estimate_outputs_bounded_and_centered_at_half_scale() {
        let mut m = tiny_model(6);
        // Zero the generator output layer: sigmoid(0) * 100 = 50 per dim.
        m.store.insert("gt.l1.w", Tensor::zeros(vec![8, NUM_PROPERTIES]));
        m.store.insert("gt.l1.b", Tensor::zeros(vec![NUM_PROPERTIES]));
        let mut tape = Tape::new();
        let z = tape.input(Tensor::from_vec(vec![0.3; 6]));
        let y = m.estimate_var(&mut tape, z).unwrap();
        for &v in tape.value(y).data() {
            assert_eq!(v, 50.0);
        }

        // Range sweep: outputs always inside [0, 100].
        let m = tiny_model(7);
        use rand::Rng;
        let mut rng = seed_stream(8, "latents");
        for _ in 0..200 {
            let z: Vec<f32> = (0..6).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let mut tape = Tape::new();
            let zv = tape.input(Tensor::from_vec(z));
            let y = m.estimate_var(&mut tape, zv).unwrap();
            for &v in tape.value(y).data() {
                assert!((0.0..=100.0).contains(&v));
            }
        }
    }

    #[test]
    fn adversarial_losses_match_closed_forms() {
        let m = tiny_model(9);
        // D output forced to 0.5: zero both D layers so sigmoid(0) = 0.5.
        let mut m = m;
        m.store.insert("d.l0.w", Tensor::zeros(vec![5 + NUM_PROPERTIES, 8]));
        m.store.insert("d.l0.b", Tensor::zeros(vec![8]));
        m.store.insert("d.l1.w", Tensor::zeros(vec![8, 1]));
        m.store.insert("d.l1.b", Tensor::zeros(vec![1]));
        let mut tape = Tape::new();
        let feat = tape.input(Tensor::new(vec![2, 5], vec![0.2; 10]).unwrap());
        let t_real = tape.input(Tensor::new(vec![2, NUM_PROPERTIES], vec![0.5; 30]).unwrap());
        let t_fake = tape.input(Tensor::new(vec![2, NUM_PROPERTIES], vec![0.5; 30]).unwrap());
        let adv = loss_adversarial(&mut tape, &m, feat, t_real, t_fake).unwrap();
        // D = 0.5 everywhere: d_loss = 2 ln 2.
        let d = tape.value(adv.d_loss).item().unwrap();
        assert!((d - 2.0 * std::f32::consts::LN_2).abs() < 1e-6);
        // t_fake == t_real: the L2 pull term vanishes, g_loss = ln 2.
        let g = tape.value(adv.g_loss).item().unwrap();
        assert!((g - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn adversarial_random_fixture_matches_hand_formula() {
        let m = tiny_model(10);
        use rand::Rng;
        let mut rng = seed_stream(11, "adv");
        let b = 3usize;
        let feat_v: Vec<f32> = (0..b * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let real_v: Vec<f32> = (0..b * NUM_PROPERTIES).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let fake_v: Vec<f32> = (0..b * NUM_PROPERTIES).map(|_| rng.gen_range(-1.5..1.5)).collect();

        // Direct recomputation of the formulas from the model outputs.
        let probe = |t: &[f32]| -> Vec<f64> {
            let mut tape = Tape::new();
            let f = tape.input(Tensor::new(vec![b, 5], feat_v.clone()).unwrap());
            let tv = tape.input(Tensor::new(vec![b, NUM_PROPERTIES], t.to_vec()).unwrap());
            let p = m.discriminate_var(&mut tape, f, tv).unwrap();
            tape.value(p).data().iter().map(|&x| x as f64).collect()
        };
        let p_real = probe(&real_v);
        let p_fake = probe(&fake_v);
        let clamp = |p: f64| p.clamp(1e-7, 1.0 - 1e-7);
        let d_expect = -(p_real.iter().map(|&p| clamp(p).ln()).sum::<f64>() / b as f64)
            - (p_fake.iter().map(|&p| (1.0 - clamp(p)).ln()).sum::<f64>() / b as f64);
        let mut pull = 0.0f64;
        for r in 0..b {
            let mut sq = 0.0f64;
            for i in 0..NUM_PROPERTIES {
                let d = (fake_v[r * NUM_PROPERTIES + i] - real_v[r * NUM_PROPERTIES + i]) as f64;
                sq += d * d;
            }
            pull += sq.sqrt();
        }
        pull /= b as f64;
        let g_expect = -(p_fake.iter().map(|&p| clamp(p).ln()).sum::<f64>() / b as f64) + pull;

        let mut tape = Tape::new();
        let f = tape.input(Tensor::new(vec![b, 5], feat_v.clone()).unwrap());
        let tr = tape.input(Tensor::new(vec![b, NUM_PROPERTIES], real_v.clone()).unwrap());
        let tf = tape.input(Tensor::new(vec![b, NUM_PROPERTIES], fake_v.clone()).unwrap());
        let adv = loss_adversarial(&mut tape, &m, f, tr, tf).unwrap();
        let d_got = tape.value(adv.d_loss).item().unwrap() as f64;
        let g_got = tape.value(adv.g_loss).item().unwrap() as f64;
        assert!((d_got - d_expect).abs() < 1e-5, "{d_got} vs {d_expect}");
        assert!((g_got - g_expect).abs() < 1e-5, "{g_got} vs {g_expect}");
    }

    #[test]
    fn class_loss_uniform_logits_and_margin_limit() {
        let mut tape = Tape::new();
        let uniform = tape.input(Tensor::new(vec![1, 6], vec![0.0; 6]).unwrap());
        let l = loss_class(&mut tape, uniform, &[3]).unwrap();
        assert!((tape.value(l).item().unwrap() - (6.0f32).ln()).abs() < 1e-6);

        // Growing margin on the correct class drives the loss toward 0.
        let mut last = f32::INFINITY;
        for margin in [1.0f32, 4.0, 16.0] {
            let mut tape = Tape::new();
            let mut logits = vec![0.0f32; 6];
            logits[2] = margin;
            let z = tape.input(Tensor::new(vec![1, 6], logits).unwrap());
            let l = loss_class(&mut tape, z, &[2]).unwrap();
            let v = tape.value(l).item().unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn total_loss_weighted_sum() {
        let mk = |tape: &mut Tape, v: f32| tape.input(Tensor::scalar(v));
        let mut tape = Tape::new();
        let (a, b, c, d) = (
            mk(&mut tape, 1.0),
            mk(&mut tape, 1.0),
            mk(&mut tape, 1.0),
            mk(&mut tape, 1.0),
        );
        let w = LossWeights {
            lambda_emb: 0.5,
            lambda_adv: 0.5,
            lambda_class: 0.5,
        };
        let t = total_loss(&mut tape, a, b, c, d, &w).unwrap();
        assert!((tape.value(t).item().unwrap() - 2.5).abs() < 1e-7);

        // All-zero weights reduce to L_est exactly.
        let mut tape = Tape::new();
        let (a, b, c, d) = (
            mk(&mut tape, 0.37),
            mk(&mut tape, 9.0),
            mk(&mut tape, 9.0),
            mk(&mut tape, 9.0),
        );
        let t = total_loss(&mut tape, a, b, c, d, &LossWeights::zeros()).unwrap();
        assert_eq!(tape.value(t).item().unwrap(), 0.37);

        // Random parts/weights match direct arithmetic.
        use rand::Rng;
        let mut rng = seed_stream(12, "tl");
        for _ in 0..20 {
            let parts: Vec<f32> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let ws = LossWeights {
                lambda_emb: rng.gen_range(0.0..2.0),
                lambda_adv: rng.gen_range(0.0..2.0),
                lambda_class: rng.gen_range(0.0..2.0),
            };
            let mut tape = Tape::new();
            let vars: Vec<Var> = parts.iter().map(|&p| tape.input(Tensor::scalar(p))).collect();
            let t = total_loss(&mut tape, vars[0], vars[1], vars[2], vars[3], &ws).unwrap();
            let expect = parts[0]
                + ws.lambda_emb * parts[1]
                + ws.lambda_adv * parts[2]
                + ws.lambda_class * parts[3];
            assert!((tape.value(t).item().unwrap() - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights {
            lambda_emb: -0.1,
            lambda_adv: 0.0,
            lambda_class: 0.0,
        };
        assert!(w.validate().is_err());
    }
}
