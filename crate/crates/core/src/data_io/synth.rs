//! Synthetic corpus generator: positives drawn from a planted relationship
//! Gaussian, negatives that break the situation in three different ways, and
//! noisy detector priors whose confidence tracks true overlap.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::records::{AnnotationRecord, LabeledBox, PriorProposal, SituationSpec};
use super::DataError;
use crate::features::{Distractor, SyntheticScene};
use crate::geometry::{from_params_unclipped, iou, to_params, BoxParams, ImageDims, PixelBox};
use crate::prob_models::{GaussianModel, BLOCK_LEN};

const MAX_PLACEMENT_ATTEMPTS: usize = 100;
const DISTRACTOR_LABELS: [&str; 4] = ["person", "car", "tree", "bench"];

/// How detector priors are generated for each test image and category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    /// Confidence is `clamp(slope * true_iou + noise * z, 0, 1)`.
    pub slope: f64,
    pub noise: f64,
    /// Perturbed copies of the true box (when the object is present).
    pub near_copies: usize,
    /// Center jitter of those copies as a fraction of the side.
    pub center_jitter: f64,
    /// Multiplicative side jitter range of those copies.
    pub scale_jitter: (f64, f64),
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            slope: 0.9,
            noise: 0.15,
            near_copies: 3,
            center_jitter: 0.15,
            scale_jitter: (0.8, 1.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub situation: SituationSpec,
    pub n_train: usize,
    pub n_pos_test: usize,
    pub n_neg_test: usize,
    pub planted: GaussianModel,
    /// Inclusive range of distractor boxes per image.
    pub distractors: (usize, usize),
    pub detector: DetectorNoise,
    pub priors_per_category: usize,
    pub dims: ImageDims,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<AnnotationRecord>,
    pub test: Vec<AnnotationRecord>,
    /// Detector priors for test images.
    pub priors: Vec<PriorProposal>,
    /// Ground truth for every train and test image.
    pub scenes: Vec<SyntheticScene>,
}

/// Negative flavors, emitted in a fixed 40/40/20 rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeFlavor {
    /// One category removed, the rest placed independently.
    MissingCategory,
    /// Every category present but drawn from independent marginals.
    Uncorrelated,
    /// Only distractors.
    DistractorsOnly,
}

impl NegativeFlavor {
    pub fn for_index(i: usize) -> Self {
        match i % 5 {
            0 | 1 => NegativeFlavor::MissingCategory,
            2 | 3 => NegativeFlavor::Uncorrelated,
            _ => NegativeFlavor::DistractorsOnly,
        }
    }
}

/// Planted "walking the dog" relationship Gaussian for three categories
/// (walker, dog, leash). Built from shared factors (global horizontal and
/// vertical placement, camera distance, leash extent) plus independent noise,
/// so relative placement is much tighter than absolute placement.
pub fn default_planted(categories: &[String]) -> Result<GaussianModel, DataError> {
    if categories.len() != 3 {
        return Err(DataError::Validation(
            "the default planted model is defined for exactly 3 categories".into(),
        ));
    }
    #[rustfmt::skip]
    let mean = [
        0.42, 0.52, 0.100, 0.42, // walker
        0.62, 0.74, 0.030, 1.35, // dog
        0.53, 0.62, 0.018, 1.00, // leash
    ];
    // columns: x shift, y shift, distance, leash extent
    #[rustfmt::skip]
    let loadings = [
        0.14, 0.00, 0.000, 0.00,
        0.00, 0.06, 0.000, 0.00,
        0.00, 0.00, 0.030, 0.00,
        0.00, 0.00, 0.000, 0.00,

        0.14, 0.00, 0.000, 0.04,
        0.00, 0.06, 0.020, 0.00,
        0.00, 0.00, 0.009, 0.00,
        0.00, 0.00, 0.000, 0.00,

        0.14, 0.00, 0.000, 0.02,
        0.00, 0.06, 0.010, 0.00,
        0.00, 0.00, 0.006, 0.00,
        0.00, 0.00, 0.000, 0.30,
    ];
    #[rustfmt::skip]
    let noise_sd = [
        0.02, 0.02, 0.012, 0.06,
        0.02, 0.02, 0.005, 0.15,
        0.02, 0.02, 0.004, 0.20,
    ];
    let l = DMatrix::from_row_slice(12, 4, &loadings);
    let cov = &l * l.transpose() + DMatrix::from_diagonal(&DVector::from_iterator(12, noise_sd.iter().map(|s| s * s)));
    GaussianModel::new(DVector::from_row_slice(&mean), cov)
        .and_then(|m| m.with_layout(categories))
        .map_err(|e| DataError::Validation(e.to_string()))
}

impl SynthSpec {
    /// Desk-scale default: 100 training images, 50 positive and 200 negative
    /// test images of a three-object situation.
    pub fn default_with_seed(seed: u64) -> Self {
        let situation = SituationSpec {
            name: "walking-the-dog".into(),
            categories: vec!["dog-walker".into(), "dog".into(), "leash".into()],
        };
        let planted = default_planted(&situation.categories).expect("default planted model is well formed");
        Self {
            situation,
            n_train: 100,
            n_pos_test: 50,
            n_neg_test: 200,
            planted,
            distractors: (1, 4),
            detector: DetectorNoise::default(),
            priors_per_category: 10,
            dims: ImageDims {
                width: 400,
                height: 300,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.situation.validate()?;
        if self.n_train == 0 || self.n_pos_test == 0 || self.n_neg_test == 0 {
            return Err(DataError::Validation("image counts must be positive".into()));
        }
        if self.dims.width == 0 || self.dims.height == 0 {
            return Err(DataError::Validation("image dims must be positive".into()));
        }
        if self.planted.dim() != BLOCK_LEN * self.situation.categories.len() {
            return Err(DataError::Validation("planted model dimension does not match the categories".into()));
        }
        for c in &self.situation.categories {
            if self.planted.block(c).is_none() {
                return Err(DataError::Validation(format!("planted model has no block for {c:?}")));
            }
        }
        if self.planted.sample(&mut ChaCha8Rng::seed_from_u64(0)).is_err() {
            return Err(DataError::Validation("planted covariance is not positive definite".into()));
        }
        if self.distractors.0 > self.distractors.1 {
            return Err(DataError::Validation("distractor range is inverted".into()));
        }
        Ok(())
    }
}

fn block_box(v: &[f64], dims: ImageDims) -> Option<PixelBox> {
    let p = BoxParams::from_slice(v);
    if !p.is_valid() {
        return None;
    }
    let b = from_params_unclipped(&p, dims);
    (b.is_valid() && b.is_inside(dims)).then_some(b)
}

fn sanitized_box(v: &[f64], dims: ImageDims) -> PixelBox {
    let p = BoxParams {
        cx: v[0].clamp(0.0, 1.0),
        cy: v[1].clamp(0.0, 1.0),
        area_ratio: v[2].clamp(1e-4, 1.0),
        aspect_ratio: v[3].clamp(0.05, 20.0),
    };
    from_params_unclipped(&p, dims).clip(dims)
}

/// Draws a full configuration from `model`; every block must land in frame.
fn place_joint<R: Rng>(model: &GaussianModel, dims: ImageDims, rng: &mut R) -> Result<Vec<PixelBox>, DataError> {
    let k = model.dim() / BLOCK_LEN;
    let mut last = None;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let v = model.sample(rng).map_err(|e| DataError::Validation(e.to_string()))?;
        let boxes: Option<Vec<PixelBox>> = (0..k)
            .map(|c| block_box(&v.as_slice()[c * BLOCK_LEN..(c + 1) * BLOCK_LEN], dims))
            .collect();
        if let Some(b) = boxes {
            return Ok(b);
        }
        last = Some(v);
    }
    let v = last.ok_or_else(|| DataError::Validation("no placement attempts".into()))?;
    let boxes: Vec<PixelBox> = (0..k)
        .map(|c| sanitized_box(&v.as_slice()[c * BLOCK_LEN..(c + 1) * BLOCK_LEN], dims))
        .collect();
    if boxes.iter().any(|b| b.w < 2.0 || b.h < 2.0) {
        return Err(DataError::Infeasible(
            "planted boxes cannot be placed inside the frame".into(),
        ));
    }
    Ok(boxes)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn random_box<R: Rng>(rng: &mut R, dims: ImageDims, area: (f64, f64), aspect: (f64, f64)) -> PixelBox {
    let p = BoxParams {
        cx: rng.random::<f64>(),
        cy: rng.random::<f64>(),
        area_ratio: log_uniform(rng, area.0, area.1),
        aspect_ratio: log_uniform(rng, aspect.0, aspect.1),
    };
    from_params_unclipped(&p, dims).clip(dims)
}

fn distractors<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Vec<Distractor> {
    let n = rng.random_range(spec.distractors.0..=spec.distractors.1);
    (0..n)
        .map(|_| Distractor {
            label: DISTRACTOR_LABELS[rng.random_range(0..DISTRACTOR_LABELS.len())].to_string(),
            bbox: random_box(rng, spec.dims, (0.005, 0.1), (0.3, 3.0)),
        })
        .collect()
}

fn record_from_scene(scene: &SyntheticScene, is_positive: bool) -> AnnotationRecord {
    let mut boxes: Vec<LabeledBox> = scene
        .gt_boxes
        .iter()
        .map(|(c, b)| LabeledBox {
            category: c.clone(),
            bbox: *b,
        })
        .collect();
    boxes.extend(scene.distractors.iter().map(|d| LabeledBox {
        category: d.label.clone(),
        bbox: d.bbox,
    }));
    AnnotationRecord {
        image_id: scene.image_id.clone(),
        dims: scene.dims,
        boxes,
        is_positive,
    }
}

fn jitter_copy<R: Rng>(truth: &PixelBox, det: &DetectorNoise, dims: ImageDims, rng: &mut R) -> PixelBox {
    let (cx, cy) = truth.center();
    let j = det.center_jitter;
    let (lo, hi) = det.scale_jitter;
    PixelBox::from_center(
        cx + rng.random_range(-j..=j) * truth.w,
        cy + rng.random_range(-j..=j) * truth.h,
        truth.w * rng.random_range(lo..=hi),
        truth.h * rng.random_range(lo..=hi),
    )
    .clip(dims)
}

fn priors_for<R: Rng>(spec: &SynthSpec, scene: &SyntheticScene, rng: &mut R) -> Vec<PriorProposal> {
    let det = &spec.detector;
    let mut out = Vec::new();
    for c in &spec.situation.categories {
        let truth = scene.gt_boxes.get(c);
        let mut boxes = Vec::with_capacity(spec.priors_per_category);
        if let Some(t) = truth {
            for _ in 0..det.near_copies.min(spec.priors_per_category) {
                boxes.push(jitter_copy(t, det, spec.dims, rng));
            }
        }
        while boxes.len() < spec.priors_per_category {
            boxes.push(random_box(rng, spec.dims, (0.005, 0.3), (0.25, 4.0)));
        }
        for b in boxes {
            let overlap = truth.map_or(0.0, |t| iou(&b, t));
            let z: f64 = rng.sample(StandardNormal);
            out.push(PriorProposal {
                image_id: scene.image_id.clone(),
                category: c.clone(),
                bbox: b,
                detector_confidence: (det.slope * overlap + det.noise * z).clamp(0.0, 1.0),
            });
        }
    }
    out
}

fn positive_scene<R: Rng>(spec: &SynthSpec, id: String, rng: &mut R) -> Result<SyntheticScene, DataError> {
    let boxes = place_joint(&spec.planted, spec.dims, rng)?;
    Ok(SyntheticScene {
        image_id: id,
        dims: spec.dims,
        gt_boxes: spec.situation.categories.iter().cloned().zip(boxes).collect(),
        distractors: distractors(spec, rng),
    })
}

fn negative_scene<R: Rng>(spec: &SynthSpec, id: String, index: usize, rng: &mut R) -> Result<SyntheticScene, DataError> {
    let cats = &spec.situation.categories;
    let mut gt = BTreeMap::new();
    let independent = |c: &String, rng: &mut R| -> Result<PixelBox, DataError> {
        let m = spec.planted.marginal(c).map_err(|e| DataError::Validation(e.to_string()))?;
        Ok(place_joint(&m, spec.dims, rng)?[0])
    };
    match NegativeFlavor::for_index(index) {
        NegativeFlavor::MissingCategory => {
            let dropped = (index / 5) % cats.len();
            for (i, c) in cats.iter().enumerate() {
                if i != dropped {
                    gt.insert(c.clone(), independent(c, rng)?);
                }
            }
        }
        NegativeFlavor::Uncorrelated => {
            for c in cats {
                gt.insert(c.clone(), independent(c, rng)?);
            }
        }
        NegativeFlavor::DistractorsOnly => {}
    }
    Ok(SyntheticScene {
        image_id: id,
        dims: spec.dims,
        gt_boxes: gt,
        distractors: distractors(spec, rng),
    })
}

/// Generates the full corpus; a pure function of `spec` (including its seed).
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticCorpus, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scenes = Vec::new();
    let mut train = Vec::new();
    for i in 0..spec.n_train {
        let s = positive_scene(spec, format!("train-{i:04}"), &mut rng)?;
        train.push(record_from_scene(&s, true));
        scenes.push(s);
    }
    let mut test = Vec::new();
    let mut priors = Vec::new();
    for i in 0..spec.n_pos_test {
        let s = positive_scene(spec, format!("pos-{i:04}"), &mut rng)?;
        test.push(record_from_scene(&s, true));
        priors.extend(priors_for(spec, &s, &mut rng));
        scenes.push(s);
    }
    for i in 0..spec.n_neg_test {
        let s = negative_scene(spec, format!("neg-{i:04}"), i, &mut rng)?;
        test.push(record_from_scene(&s, false));
        priors.extend(priors_for(spec, &s, &mut rng));
        scenes.push(s);
    }
    Ok(SyntheticCorpus {
        train,
        test,
        priors,
        scenes,
    })
}

/// Concatenated box parameters of a record's situation boxes, in category
/// order; `None` when any category is missing.
pub fn situation_vector(record: &AnnotationRecord, categories: &[String]) -> Option<Vec<f64>> {
    let mut v = Vec::with_capacity(categories.len() * BLOCK_LEN);
    for c in categories {
        let b = record.box_for(c)?;
        v.extend_from_slice(&to_params(b, record.dims).ok()?.to_array());
    }
    Some(v)
}
