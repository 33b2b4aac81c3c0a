//! Ridge-regression localization (IOU prediction) and box-refinement models,
//! plus generation of the jittered training crops they learn from.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureError, FeatureProvider};
use crate::geometry::{iou, ImageDims, PixelBox};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const MIN_TRAINING_CROPS: usize = 10;
pub const MIN_CROP_IOU: f64 = 0.1;
pub const MAX_JITTER_ATTEMPTS: usize = 50;
const SINGULAR_PIVOT: f64 = 1e-10;
const CENTER_JITTER: f64 = 0.3;
const SCALE_JITTER: (f64, f64) = (0.7, 1.4);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnError {
    #[error("no training rows")]
    Empty,
    #[error("ridge strength must be finite and nonnegative, got {0}")]
    BadLambda(f64),
    #[error("feature rows have inconsistent lengths ({expected} vs {found})")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} targets for {1} feature rows")]
    TargetCount(usize, usize),
    #[error("non-finite training value")]
    NonFinite,
    #[error("normal equations are singular; increase lambda")]
    Singular,
    #[error("category {category:?} has {found} crops, need at least {needed}")]
    InsufficientCrops {
        category: String,
        needed: usize,
        found: usize,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// `prediction = weights . x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Unclamped linear prediction.
    pub fn predict(&self, x: &[f64]) -> Result<f64, LearnError> {
        if x.len() != self.weights.len() {
            return Err(LearnError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }
}

/// Ridge regression with an unregularized bias: features and targets are
/// centered, `(Xc'Xc + lambda I) w = Xc'yc` is solved by Cholesky, and the
/// bias is recovered from the means.
pub fn fit_ridge<V: AsRef<[f64]>>(features: &[V], targets: &[f64], lambda: f64) -> Result<LinearModel, LearnError> {
    if features.is_empty() {
        return Err(LearnError::Empty);
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LearnError::BadLambda(lambda));
    }
    if targets.len() != features.len() {
        return Err(LearnError::TargetCount(targets.len(), features.len()));
    }
    let n = features.len();
    let d = features[0].as_ref().len();
    if d == 0 {
        return Err(LearnError::Empty);
    }
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, row) in features.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != d {
            return Err(LearnError::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    if x.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(LearnError::NonFinite);
    }
    let x_mean = x.row_mean();
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    for mut row in x.row_iter_mut() {
        row -= &x_mean;
    }
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));

    let mut gram = x.tr_mul(&x);
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = x.tr_mul(&y);
    let diag: Vec<f64> = gram.diagonal().iter().copied().collect();
    let chol = Cholesky::new(gram).ok_or(LearnError::Singular)?;
    // without a ridge, a pivot that is tiny relative to its column's own
    // scale means the column is numerically a combination of earlier ones
    let l = chol.l_dirty();
    if lambda == 0.0 && (0..d).any(|i| l[(i, i)] * l[(i, i)] <= SINGULAR_PIVOT * diag[i]) {
        return Err(LearnError::Singular);
    }
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(LearnError::Singular);
    }
    let bias = y_mean - x_mean.iter().zip(w.iter()).map(|(m, w)| m * w).sum::<f64>();
    Ok(LinearModel {
        weights: w.iter().copied().collect(),
        bias,
        lambda,
    })
}

/// Box-regression deltas `(t_x, t_y, t_w, t_h)` in center form:
/// `t_x = (G_x - P_x) / P_w`, `t_w = ln(G_w / P_w)` and likewise for y/h.
pub fn box_deltas(proposal: &PixelBox, target: &PixelBox) -> [f64; 4] {
    let (px, py) = proposal.center();
    let (gx, gy) = target.center();
    [
        (gx - px) / proposal.w,
        (gy - py) / proposal.h,
        (target.w / proposal.w).ln(),
        (target.h / proposal.h).ln(),
    ]
}

/// Inverse of [`box_deltas`], before any clipping.
pub fn apply_deltas(proposal: &PixelBox, t: [f64; 4]) -> PixelBox {
    let (px, py) = proposal.center();
    PixelBox::from_center(
        px + proposal.w * t[0],
        py + proposal.h * t[1],
        proposal.w * t[2].exp(),
        proposal.h * t[3].exp(),
    )
}

/// Four ridge models predicting `(t_x, t_y, t_w, t_h)` from a crop's features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerModel {
    pub tx: LinearModel,
    pub ty: LinearModel,
    pub tw: LinearModel,
    pub th: LinearModel,
}

impl RefinerModel {
    pub fn predict_deltas(&self, feature: &[f64]) -> Result<[f64; 4], LearnError> {
        Ok([
            self.tx.predict(feature)?,
            self.ty.predict(feature)?,
            self.tw.predict(feature)?,
            self.th.predict(feature)?,
        ])
    }
}

/// Moves `b` by the refiner's predicted deltas and clips to the frame.
pub fn apply_refinement(
    refiner: &RefinerModel,
    feature: &[f64],
    b: &PixelBox,
    dims: ImageDims,
) -> Result<PixelBox, LearnError> {
    let t = refiner.predict_deltas(feature)?;
    Ok(apply_deltas(b, t).clip(dims))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCrop {
    pub image_id: String,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub feature: Vec<f64>,
    pub target_iou: f64,
    pub target_deltas: [f64; 4],
}

/// A ground-truth box the crop generator jitters around.
#[derive(Debug, Clone)]
pub struct CropSource<'a> {
    pub image_id: &'a str,
    pub dims: ImageDims,
    pub category: &'a str,
    pub truth: PixelBox,
}

/// Emits, for each source box, the box itself plus `crops_per_box` jittered
/// variants with IOU >= 0.1 against it. Center jitter is uniform within
/// +-30% of the side, scale jitter uniform in [0.7, 1.4] per side. A crop
/// that cannot reach the IOU floor within 50 attempts is skipped.
pub fn build_crops<R: Rng + ?Sized>(
    sources: &[CropSource<'_>],
    provider: &dyn FeatureProvider,
    rng: &mut R,
    crops_per_box: usize,
) -> Result<Vec<TrainingCrop>, LearnError> {
    let mut out = Vec::with_capacity(sources.len() * (crops_per_box + 1));
    for src in sources {
        let truth = src.truth.clip(src.dims);
        let mut push = |bbox: PixelBox| -> Result<(), LearnError> {
            out.push(TrainingCrop {
                image_id: src.image_id.to_string(),
                category: src.category.to_string(),
                bbox,
                feature: provider.features(src.image_id, &bbox)?,
                target_iou: iou(&bbox, &truth),
                target_deltas: box_deltas(&bbox, &truth),
            });
            Ok(())
        };
        push(truth)?;
        for _ in 0..crops_per_box {
            if let Some(b) = jitter_box(&truth, src.dims, rng) {
                push(b)?;
            }
        }
    }
    Ok(out)
}

/// One jittered, clipped copy of `truth` with IOU >= [`MIN_CROP_IOU`].
pub fn jitter_box<R: Rng + ?Sized>(truth: &PixelBox, dims: ImageDims, rng: &mut R) -> Option<PixelBox> {
    let (cx, cy) = truth.center();
    for _ in 0..MAX_JITTER_ATTEMPTS {
        let dx = rng.random_range(-CENTER_JITTER..=CENTER_JITTER) * truth.w;
        let dy = rng.random_range(-CENTER_JITTER..=CENTER_JITTER) * truth.h;
        let sw = rng.random_range(SCALE_JITTER.0..=SCALE_JITTER.1);
        let sh = rng.random_range(SCALE_JITTER.0..=SCALE_JITTER.1);
        let b = PixelBox::from_center(cx + dx, cy + dy, truth.w * sw, truth.h * sh).clip(dims);
        if iou(&b, truth) >= MIN_CROP_IOU {
            return Some(b);
        }
    }
    None
}

fn crops_for<'a>(category: &str, crops: &'a [TrainingCrop]) -> Result<Vec<&'a TrainingCrop>, LearnError> {
    let mine: Vec<&TrainingCrop> = crops.iter().filter(|c| c.category == category).collect();
    if mine.len() < MIN_TRAINING_CROPS {
        return Err(LearnError::InsufficientCrops {
            category: category.to_string(),
            needed: MIN_TRAINING_CROPS,
            found: mine.len(),
        });
    }
    Ok(mine)
}

/// Ridge model from crop features to true IOU with the category's ground truth.
pub fn train_localizer(category: &str, crops: &[TrainingCrop], lambda: f64) -> Result<LinearModel, LearnError> {
    let mine = crops_for(category, crops)?;
    let x: Vec<&[f64]> = mine.iter().map(|c| c.feature.as_slice()).collect();
    let y: Vec<f64> = mine.iter().map(|c| c.target_iou).collect();
    fit_ridge(&x, &y, lambda)
}

pub fn train_refiner(category: &str, crops: &[TrainingCrop], lambda: f64) -> Result<RefinerModel, LearnError> {
    let mine = crops_for(category, crops)?;
    let x: Vec<&[f64]> = mine.iter().map(|c| c.feature.as_slice()).collect();
    let fit = |k: usize| {
        let y: Vec<f64> = mine.iter().map(|c| c.target_deltas[k]).collect();
        fit_ridge(&x, &y, lambda)
    };
    Ok(RefinerModel {
        tx: fit(0)?,
        ty: fit(1)?,
        tw: fit(2)?,
        th: fit(3)?,
    })
}
