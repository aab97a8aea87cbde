//! Procedural surface materials: tactile vectors with documented couplings
//! into view-dependent visual appearance.
//!
//! Couplings (all derived from the tactile vector and the per-sample seed):
//! macro amplitude <- mTX, macro period <- mCO, phase regularity <- mRG,
//! micro amplitude <- uRO, micro frequency <- uCO, specular gain <- fST,
//! specular angular width inversely <- fRS, vignette softness <- mean of the
//! five compliance properties, hue <- tCO and tPR. Adhesive tack (aTK) has
//! no visual coupling at all: it is unobservable from pixels by
//! construction, which makes it the hard case for every estimator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::derive_seed;
use crate::synth::registry::*;

/// Angular range of the capture rig along the roll axis, degrees.
pub const ANGLE_MIN_DEG: f32 = -45.0;
pub const ANGLE_MAX_DEG: f32 = 45.0;

/// Number of repeated tactile measurements per sample.
pub const NUM_MEASUREMENTS: usize = 5;

/// Material category labels. Metadata only: never a training target.
pub const CATEGORY_LABELS: [&str; 15] = [
    "plastic",
    "leather",
    "wood",
    "upholstery",
    "denim",
    "cotton",
    "felt",
    "foam",
    "paper",
    "rubber",
    "tile",
    "carpet",
    "vinyl",
    "cork",
    "other",
];

/// Generator configuration. The Beta shape parameters steer per-property
/// value spreads; they are configuration, not contract.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenConfig {
    pub num_samples: usize,
    pub views_per_sample: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Std-dev of the per-measurement tactile noise, tactile units.
    pub sigma_meas: f32,
    /// Std-dev of the per-pixel render noise, intensity units.
    pub pixel_noise: f32,
    /// Per-property Beta shape parameters (alpha, beta), registry order.
    pub beta_shapes: Vec<(f32, f32)>,
}

impl GenConfig {
    /// Desk-scale preset: full experiments finish in minutes on CPU while
    /// preserving all schema semantics.
    pub fn desk() -> Self {
        GenConfig {
            num_samples: 400,
            views_per_sample: 20,
            image_height: 32,
            image_width: 32,
            sigma_meas: 2.0,
            pixel_noise: 0.01,
            beta_shapes: default_beta_shapes(),
        }
    }

    /// Larger preset matching the source capture shape, for scale testing.
    pub fn paper_shape() -> Self {
        GenConfig {
            num_samples: 400,
            views_per_sample: 100,
            image_height: 64,
            image_width: 64,
            sigma_meas: 2.0,
            pixel_noise: 0.01,
            beta_shapes: default_beta_shapes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views_per_sample < 2 {
            return Err(Error::InvalidConfig(
                "views_per_sample must be at least 2".into(),
            ));
        }
        if self.image_height < 4 || self.image_width < 4 {
            return Err(Error::InvalidConfig("image size must be at least 4x4".into()));
        }
        if self.sigma_meas < 0.0 || !self.sigma_meas.is_finite() {
            return Err(Error::InvalidConfig("sigma_meas must be >= 0".into()));
        }
        if self.pixel_noise < 0.0 || !self.pixel_noise.is_finite() {
            return Err(Error::InvalidConfig("pixel_noise must be >= 0".into()));
        }
        if self.beta_shapes.len() != NUM_PROPERTIES {
            return Err(Error::InvalidConfig(format!(
                "need {NUM_PROPERTIES} beta shape pairs, got {}",
                self.beta_shapes.len()
            )));
        }
        for &(a, b) in &self.beta_shapes {
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "beta shape parameters must be positive, got ({a}, {b})"
                )));
            }
        }
        Ok(())
    }

    /// Expected tactile value per property under the configured Beta draws.
    pub fn expected_means(&self) -> Vec<f64> {
        self.beta_shapes
            .iter()
            .map(|&(a, b)| 100.0 * a as f64 / (a as f64 + b as f64))
            .collect()
    }
}

/// Mildly varied spreads loosely shadowing the per-property box plots of the
/// measured distributions: most properties mid-heavy, adhesion skewed low.
pub fn default_beta_shapes() -> Vec<(f32, f32)> {
    vec![
        (2.2, 2.2), // fRS
        (2.0, 2.4), // fST
        (2.0, 2.0), // uCO
        (1.8, 2.4), // uRO
        (2.4, 2.0), // mRG
        (2.0, 2.0), // mCO
        (1.8, 2.2), // mTX
        (2.6, 1.8), // tCO
        (2.2, 2.2), // tPR
        (1.8, 2.6), // cCM
        (2.0, 2.4), // cDF
        (2.0, 2.0), // cDP
        (2.2, 2.2), // cRX
        (1.8, 2.8), // cYD
        (1.5, 3.5), // aTK
    ]
}

/// Render parameters derived from a tactile vector and a per-sample seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub base_color: [f32; 3],
    pub macro_amplitude: f32,
    pub macro_period: f32,
    pub macro_angle: f32,
    pub phase_jitter: f32,
    pub micro_amplitude: f32,
    pub micro_cells: f32,
    pub specular_gain: f32,
    pub specular_width_deg: f32,
    pub specular_center_deg: f32,
    pub vignette_softness: f32,
}

/// A generated material: ground-truth tactile vector, render parameters,
/// category label (metadata) and the per-sample seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSample {
    pub tactile: [f32; NUM_PROPERTIES],
    pub render: RenderParams,
    pub category: String,
    pub seed: u64,
}

/// Derives render parameters from a tactile vector and the sample seed.
pub fn derive_render_params(t: &[f32; NUM_PROPERTIES], seed: u64) -> RenderParams {
    let mut prng = crate::sampling::seed_stream(seed, "render-params");
    let theta0 = 5.0 + 30.0 * prng.gen::<f32>();
    let macro_angle = std::f32::consts::PI * prng.gen::<f32>();
    let compliance_mean =
        (t[IDX_CCM] + t[IDX_CDF] + t[IDX_CDP] + t[IDX_CRX] + t[IDX_CYD]) / 5.0;
    RenderParams {
        base_color: [
            0.20 + 0.30 * t[IDX_TPR] / 100.0,
            0.32,
            0.20 + 0.30 * t[IDX_TCO] / 100.0,
        ],
        macro_amplitude: 0.22 * t[IDX_MTX] / 100.0,
        macro_period: 0.05 + 0.30 * t[IDX_MCO] / 100.0,
        macro_angle,
        phase_jitter: std::f32::consts::PI * (1.0 - t[IDX_MRG] / 100.0),
        micro_amplitude: 0.15 * t[IDX_URO] / 100.0,
        micro_cells: 4.0 + 56.0 * t[IDX_UCO] / 100.0,
        specular_gain: 0.55 * t[IDX_FST] / 100.0,
        specular_width_deg: 12.0 - 9.0 * t[IDX_FRS] / 100.0,
        specular_center_deg: theta0,
        vignette_softness: 0.40 * compliance_mean / 100.0,
    }
}

/// Draws one material: tactile values from the configured Beta-scaled
/// distributions, render parameters derived from them and the sample seed.
pub fn sample_material(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Result<MaterialSample> {
    cfg.validate()?;
    let mut tactile = [0.0f32; NUM_PROPERTIES];
    for (i, &(a, b)) in cfg.beta_shapes.iter().enumerate() {
        let beta = Beta::new(a as f64, b as f64)
            .map_err(|e| Error::InvalidConfig(format!("beta shape: {e}")))?;
        tactile[i] = (100.0 * beta.sample(rng)).clamp(0.0, 100.0) as f32;
    }
    let seed: u64 = rng.gen();
    let category = CATEGORY_LABELS[rng.gen_range(0..CATEGORY_LABELS.len())].to_string();
    let render = derive_render_params(&tactile, seed);
    Ok(MaterialSample {
        tactile,
        render,
        category,
        seed,
    })
}

/// View-dependent specular gain `g(angle) = s * exp(-(angle-theta0)^2 / (2 sigma^2))`.
pub fn specular_gain(m: &MaterialSample, angle_deg: f32) -> f32 {
    let d = angle_deg - m.render.specular_center_deg;
    let sigma = m.render.specular_width_deg;
    m.render.specular_gain * (-(d * d) / (2.0 * sigma * sigma)).exp()
}

fn lattice_hash(ix: i64, iy: i64, seed: u64) -> f32 {
    let h = derive_seed(seed, (ix as u64).wrapping_mul(0x1f1f_1f1f) ^ (iy as u64).rotate_left(32));
    // Map the top 24 bits to [-1, 1).
    ((h >> 40) as f32 / 8_388_608.0) - 1.0
}

/// Bilinear value noise over a `cells x cells` lattice, range about [-1, 1].
fn value_noise(u: f32, v: f32, cells: f32, seed: u64) -> f32 {
    let x = u * cells;
    let y = v * cells;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (ix, iy) = (x0 as i64, y0 as i64);
    let n00 = lattice_hash(ix, iy, seed);
    let n10 = lattice_hash(ix + 1, iy, seed);
    let n01 = lattice_hash(ix, iy + 1, seed);
    let n11 = lattice_hash(ix + 1, iy + 1, seed);
    let a = n00 + (n10 - n00) * fx;
    let b = n01 + (n11 - n01) * fx;
    a + (b - a) * fy
}

/// Blocky (nearest-cell) noise for the microtexture layer, range [-1, 1).
fn cell_noise(u: f32, v: f32, cells: f32, seed: u64) -> f32 {
    lattice_hash((u * cells).floor() as i64, (v * cells).floor() as i64, seed)
}

/// Renders one view of a material at the given roll angle. Output is an
/// `H x W x 3` image in `[0, 1]`, row-major with interleaved channels.
///
/// Deterministic given (material, angle, config): per-pixel noise is seeded
/// from the sample seed and the angle bits.
pub fn render_view(m: &MaterialSample, angle_deg: f32, cfg: &GenConfig) -> Result<Vec<f32>> {
    if !(ANGLE_MIN_DEG..=ANGLE_MAX_DEG).contains(&angle_deg) {
        return Err(Error::InvalidArgument(format!(
            "viewing angle {angle_deg} outside [{ANGLE_MIN_DEG}, {ANGLE_MAX_DEG}]"
        )));
    }
    let (h, w) = (cfg.image_height, cfg.image_width);
    let r = &m.render;
    let g_view = specular_gain(m, angle_deg);
    let (sin_a, cos_a) = r.macro_angle.sin_cos();
    let phase_seed = derive_seed(m.seed, 0x7068_6173);
    let micro_seed = derive_seed(m.seed, 0x6d69_6372);

    let mut noise_rng = crate::sampling::seed_stream(
        derive_seed(m.seed, angle_deg.to_bits() as u64),
        "pixel-noise",
    );
    let normal = Normal::new(0.0f32, 1.0f32).expect("unit normal");

    let mut out = vec![0.0f32; h * w * 3];
    for y in 0..h {
        let u = (y as f32 + 0.5) / h as f32;
        for x in 0..w {
            let v = (x as f32 + 0.5) / w as f32;
            let du = u - 0.5;
            let dv = v - 0.5;
            let vignette = 1.0 - r.vignette_softness * (du * du + dv * dv) / 0.5;

            let phase = r.phase_jitter * value_noise(u, v, 3.0, phase_seed);
            let wave = (std::f32::consts::TAU * (u * cos_a + v * sin_a) / r.macro_period
                + phase)
                .sin();
            let macro_term = r.macro_amplitude * (0.5 + 0.5 * wave);

            let micro_term = r.micro_amplitude * cell_noise(u, v, r.micro_cells, micro_seed);

            let highlight = (-(du * du + dv * dv) / (2.0 * 0.18 * 0.18)).exp();
            let spec_term = g_view * highlight;

            let base_idx = (y * w + x) * 3;
            for c in 0..3 {
                let noise = if cfg.pixel_noise > 0.0 {
                    cfg.pixel_noise * normal.sample(&mut noise_rng)
                } else {
                    0.0
                };
                let val =
                    r.base_color[c] * vignette + macro_term + micro_term + spec_term + noise;
                out[base_idx + c] = val.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Five repeated noisy measurements of the ground-truth tactile vector,
/// clipped to `[0, 100]`. `sigma_meas = 0` gives five identical rows.
pub fn measure_tactile(
    m: &MaterialSample,
    rng: &mut ChaCha8Rng,
    sigma_meas: f32,
) -> Result<Vec<[f32; NUM_PROPERTIES]>> {
    if sigma_meas < 0.0 || !sigma_meas.is_finite() {
        return Err(Error::InvalidArgument("sigma_meas must be >= 0".into()));
    }
    let mut rows = Vec::with_capacity(NUM_MEASUREMENTS);
    if sigma_meas == 0.0 {
        for _ in 0..NUM_MEASUREMENTS {
            rows.push(m.tactile);
        }
        return Ok(rows);
    }
    let normal = Normal::new(0.0f32, sigma_meas).expect("valid sigma");
    for _ in 0..NUM_MEASUREMENTS {
        let mut row = [0.0f32; NUM_PROPERTIES];
        for (i, r) in row.iter_mut().enumerate() {
            *r = (m.tactile[i] + normal.sample(rng)).clamp(0.0, 100.0);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Exact viewing angle of frame `k` out of `n`: `-45 + 90 k / (n-1)` degrees.
pub fn frame_angle(k: usize, n: usize) -> f32 {
    ANGLE_MIN_DEG + 90.0 * k as f32 / (n - 1) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::seed_stream;

    fn small_cfg() -> GenConfig {
        GenConfig {
            num_samples: 10,
            views_per_sample: 5,
            image_height: 16,
            image_width: 16,
            sigma_meas: 2.0,
            pixel_noise: 0.01,
            beta_shapes: default_beta_shapes(),
        }
    }

    #[test]
    fn sample_material_deterministic_per_seed() {
        let cfg = small_cfg();
        let a = sample_material(&mut seed_stream(9, "mat"), &cfg).unwrap();
        let b = sample_material(&mut seed_stream(9, "mat"), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_macrotexture_gives_flat_macro_layer() {
        let mut t = [50.0f32; NUM_PROPERTIES];
        t[IDX_MTX] = 0.0;
        let r = derive_render_params(&t, 7);
        assert_eq!(r.macro_amplitude, 0.0);
    }

    #[test]
    fn atk_has_no_render_coupling() {
        let mut lo = [50.0f32; NUM_PROPERTIES];
        let mut hi = lo;
        lo[IDX_ATK] = 0.0;
        hi[IDX_ATK] = 100.0;
        assert_eq!(derive_render_params(&lo, 3), derive_render_params(&hi, 3));
    }

    #[test]
    fn tactile_values_in_range_and_means_near_configured_band() {
        let cfg = small_cfg();
        let mut rng = seed_stream(21, "mc");
        let n = 1000;
        let mut sums = [0.0f64; NUM_PROPERTIES];
        for _ in 0..n {
            let m = sample_material(&mut rng, &cfg).unwrap();
            for (i, &v) in m.tactile.iter().enumerate() {
                assert!((0.0..=100.0).contains(&v), "value {v} out of range");
                sums[i] += v as f64;
            }
        }
        let expect = cfg.expected_means();
        for i in 0..NUM_PROPERTIES {
            let mean = sums[i] / n as f64;
            // Beta spreads here have sd < 25 units; 1000 draws put the
            // sample mean within ~3 units of the expectation w.h.p.
            assert!(
                (mean - expect[i]).abs() < 3.0,
                "property {i}: mean {mean} vs expected {}",
                expect[i]
            );
        }
    }

    #[test]
    fn no_specular_means_views_differ_only_by_noise() {
        let mut cfg = small_cfg();
        cfg.pixel_noise = 0.0;
        let mut t = [50.0f32; NUM_PROPERTIES];
        t[IDX_FST] = 0.0; // specular gain 0
        let m = MaterialSample {
            tactile: t,
            render: derive_render_params(&t, 11),
            category: "other".into(),
            seed: 11,
        };
        let a = render_view(&m, -45.0, &cfg).unwrap();
        let b = render_view(&m, 45.0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn specular_gain_gaussian_closed_form() {
        let t = [60.0f32; NUM_PROPERTIES];
        let m = MaterialSample {
            tactile: t,
            render: derive_render_params(&t, 5),
            category: "other".into(),
            seed: 5,
        };
        let theta0 = m.render.specular_center_deg;
        let sigma = m.render.specular_width_deg;
        let ratio = specular_gain(&m, theta0) / specular_gain(&m, theta0 + 2.0 * sigma);
        assert!((ratio - std::f64::consts::E.powi(2) as f32).abs() / ratio < 1e-4);
    }

    #[test]
    fn mean_intensity_monotone_in_macro_amplitude() {
        let mut cfg = small_cfg();
        cfg.pixel_noise = 0.0;
        let t = [40.0f32; NUM_PROPERTIES];
        let mut means = Vec::new();
        for step in 0..5 {
            let mut m = MaterialSample {
                tactile: t,
                render: derive_render_params(&t, 13),
                category: "other".into(),
                seed: 13,
            };
            m.render.macro_amplitude = 0.05 * step as f32;
            let img = render_view(&m, 0.0, &cfg).unwrap();
            let mean: f64 = img.iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
            means.push(mean);
        }
        for pair in means.windows(2) {
            assert!(pair[1] > pair[0], "means not increasing: {means:?}");
        }
    }

    #[test]
    fn render_rejects_out_of_range_angle() {
        let cfg = small_cfg();
        let m = sample_material(&mut seed_stream(2, "mat"), &cfg).unwrap();
        assert!(render_view(&m, 46.0, &cfg).is_err());
        assert!(render_view(&m, -45.01, &cfg).is_err());
    }

    #[test]
    fn render_deterministic_per_frame() {
        let cfg = small_cfg();
        let m = sample_material(&mut seed_stream(2, "mat"), &cfg).unwrap();
        assert_eq!(
            render_view(&m, 10.0, &cfg).unwrap(),
            render_view(&m, 10.0, &cfg).unwrap()
        );
    }

    #[test]
    fn measurements_with_zero_sigma_equal_truth() {
        let cfg = small_cfg();
        let m = sample_material(&mut seed_stream(4, "mat"), &cfg).unwrap();
        let rows = measure_tactile(&m, &mut seed_stream(4, "meas"), 0.0).unwrap();
        assert_eq!(rows.len(), NUM_MEASUREMENTS);
        for row in rows {
            assert_eq!(row, m.tactile);
        }
    }

    #[test]
    fn measurement_noise_std_close_to_sigma() {
        // Pool measurement deviations across many materials; away from the
        // clip boundaries the per-entry std approaches sigma.
        let cfg = small_cfg();
        let mut rng = seed_stream(31, "mc-noise");
        let sigma = 2.0f32;
        let mut sq_sum = 0.0f64;
        let mut count = 0usize;
        for _ in 0..2000 {
            let m = sample_material(&mut rng, &cfg).unwrap();
            let rows = measure_tactile(&m, &mut rng, sigma).unwrap();
            for row in rows {
                for i in 0..NUM_PROPERTIES {
                    // Skip entries near the clip boundary.
                    if m.tactile[i] > 4.0 * sigma && m.tactile[i] < 100.0 - 4.0 * sigma {
                        let d = (row[i] - m.tactile[i]) as f64;
                        sq_sum += d * d;
                        count += 1;
                    }
                }
            }
        }
        let std = (sq_sum / count as f64).sqrt();
        assert!(
            (std - sigma as f64).abs() / (sigma as f64) < 0.05,
            "std {std} vs sigma {sigma}"
        );
    }

    #[test]
    fn measurement_row_mean_unbiased() {
        let cfg = small_cfg();
        let m = sample_material(&mut seed_stream(5, "mat"), &cfg).unwrap();
        let mut rng = seed_stream(5, "meas");
        // Average many repeat sets; the pooled mean converges to the truth.
        let mut acc = [0.0f64; NUM_PROPERTIES];
        let reps = 2000;
        for _ in 0..reps {
            let rows = measure_tactile(&m, &mut rng, 2.0).unwrap();
            for row in rows {
                for i in 0..NUM_PROPERTIES {
                    acc[i] += row[i] as f64;
                }
            }
        }
        for i in 0..NUM_PROPERTIES {
            let mean = acc[i] / (reps * NUM_MEASUREMENTS) as f64;
            let truth = m.tactile[i] as f64;
            // Clipping skews entries near the boundary; skip those.
            if truth > 10.0 && truth < 90.0 {
                assert!((mean - truth).abs() < 0.2, "prop {i}: {mean} vs {truth}");
            }
        }
    }

    #[test]
    fn frame_angles_exact_formula() {
        assert_eq!(frame_angle(0, 20), -45.0);
        assert_eq!(frame_angle(19, 20), 45.0);
        for k in 0..20 {
            assert_eq!(frame_angle(k, 20), -45.0 + 90.0 * k as f32 / 19.0);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small_cfg();
        cfg.views_per_sample = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.sigma_meas = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.beta_shapes[3] = (0.0, 2.0);
        assert!(cfg.validate().is_err());
    }
}
