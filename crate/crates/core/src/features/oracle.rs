use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureProvider};
use crate::geometry::{iou, to_params, ImageDims, PixelBox};
use crate::util::{fnv1a, splitmix64, unit_open};

pub const DEFAULT_FEATURE_DIM: usize = 64;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

/// Ground truth of one synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub image_id: String,
    pub dims: ImageDims,
    /// At most one box per situation category.
    pub gt_boxes: BTreeMap<String, PixelBox>,
    #[serde(default)]
    pub distractors: Vec<Distractor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
}

/// Settings that fully determine an oracle provider given its scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub dim: usize,
    pub noise_sigma: f64,
    pub projection_seed: u64,
    pub categories: Vec<String>,
}

impl OracleConfig {
    /// Default dimension and noise for the given categories.
    pub fn for_categories(categories: Vec<String>, projection_seed: u64) -> Self {
        Self {
            dim: DEFAULT_FEATURE_DIM,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            projection_seed,
            categories,
        }
    }
}

/// Stand-in for CNN crop features: a fixed linear projection of a latent
/// vector whose leading entries are the box's IOU with each category's
/// ground truth, followed by its normalized parameters and a constant.
///
/// Noise is a pure function of `(image_id, box)`, so repeated queries return
/// identical vectors.
#[derive(Debug, Clone)]
pub struct OracleFeatures {
    config: OracleConfig,
    projection: DMatrix<f64>,
    scenes: HashMap<String, SyntheticScene>,
}

impl OracleFeatures {
    pub fn new(config: OracleConfig, scenes: impl IntoIterator<Item = SyntheticScene>) -> Result<Self, FeatureError> {
        let latent = latent_dim(config.categories.len());
        if config.dim < latent {
            return Err(FeatureError::DimTooSmall {
                dim: config.dim,
                latent,
            });
        }
        if !(config.noise_sigma >= 0.0) {
            return Err(FeatureError::BadNoise(config.noise_sigma));
        }
        let projection = full_rank_projection(config.dim, latent, config.projection_seed);
        Ok(Self {
            config,
            projection,
            scenes: scenes.into_iter().map(|s| (s.image_id.clone(), s)).collect(),
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn scene(&self, image_id: &str) -> Option<&SyntheticScene> {
        self.scenes.get(image_id)
    }

    /// Latent vector `[iou per category; cx, cy, area, aspect; 1]`.
    pub fn latent(&self, scene: &SyntheticScene, b: &PixelBox) -> Result<Vec<f64>, FeatureError> {
        let mut psi = Vec::with_capacity(latent_dim(self.config.categories.len()));
        for c in &self.config.categories {
            psi.push(scene.gt_boxes.get(c).map_or(0.0, |g| iou(b, g)));
        }
        let p = to_params(b, scene.dims)?;
        psi.extend_from_slice(&p.to_array());
        psi.push(1.0);
        Ok(psi)
    }
}

pub fn latent_dim(categories: usize) -> usize {
    categories + 5
}

/// Gaussian matrix scaled by `1/sqrt(cols)`, redrawn until its smallest
/// singular value is clearly nonzero.
fn full_rank_projection(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (cols as f64).sqrt();
    loop {
        let a = DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let sv = a.singular_values();
        if sv.min() > 1e-6 * sv.max() {
            return a;
        }
    }
}

/// Unit-variance pseudo-noise keyed on the image and the box quantized to 0.1 px.
fn hashed_noise(image_id: &str, b: &PixelBox, len: usize) -> Vec<f64> {
    let mut key = fnv1a(image_id.as_bytes());
    for v in [b.x, b.y, b.w, b.h] {
        let q = (v * 10.0).round() as i64;
        key = splitmix64(key ^ q as u64);
    }
    let mut out = Vec::with_capacity(len);
    let mut state = key;
    while out.len() < len {
        state = splitmix64(state);
        let u1 = unit_open(state);
        state = splitmix64(state);
        let u2 = unit_open(state);
        // Box-Muller
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        if out.len() < len {
            out.push(r * theta.sin());
        }
    }
    out
}

impl FeatureProvider for OracleFeatures {
    fn feature_dim(&self) -> usize {
        self.config.dim
    }

    fn features(&self, image_id: &str, b: &PixelBox) -> Result<Vec<f64>, FeatureError> {
        let scene = self
            .scenes
            .get(image_id)
            .ok_or_else(|| FeatureError::UnknownImage(image_id.to_string()))?;
        let psi = DVector::from_vec(self.latent(scene, b)?);
        let mut f = &self.projection * psi;
        if self.config.noise_sigma > 0.0 {
            for (v, n) in f.iter_mut().zip(hashed_noise(image_id, b, self.config.dim)) {
                *v += self.config.noise_sigma * n;
            }
        }
        Ok(f.iter().copied().collect())
    }
}
