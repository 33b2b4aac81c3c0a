//! Statistical machinery: the relationship Gaussian with conditioning and
//! sampling, log-normal size/shape priors, and Gaussian mixtures.
//!
//! All solves go through a Cholesky factorization; no matrix is ever
//! explicitly inverted. Models are immutable once fitted.

mod gaussian;
mod gmm;
mod lognormal;

pub use gaussian::{
    effective_ridge, fit_gaussian, GaussianModel, LayoutBlock, ABSOLUTE_COV_FLOOR, BLOCK_LEN, DEFAULT_RIDGE,
};
pub use gmm::{fit_gmm, GmmFit, GmmModel, DEFAULT_COMPONENTS, EM_MAX_ITERATIONS, EM_TOLERANCE};
pub use lognormal::{fit_lognormal, LogNormalModel, SIGMA_FLOOR};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MODEL_DOC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty model or sample set")]
    Empty,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("value must be positive, got {0}")]
    NonPositive(f64),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("observed-block covariance is numerically singular")]
    SingularConditioning,
    #[error("observed index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("conditioning must leave at least one dimension unobserved")]
    NothingLeft,
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("mixture weights must be nonnegative and sum to 1")]
    BadWeights,
    #[error("model document: {0}")]
    Document(String),
}

#[derive(Serialize, Deserialize)]
struct GaussianDoc {
    #[serde(rename = "type")]
    kind: String,
    version: u32,
    dim: usize,
    mean: Vec<f64>,
    /// Row-major.
    cov: Vec<f64>,
    layout: Vec<LayoutBlock>,
}

impl Serialize for GaussianModel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let dim = self.dim();
        let cov = (0..dim)
            .flat_map(|r| (0..dim).map(move |c| (r, c)))
            .map(|(r, c)| self.cov()[(r, c)])
            .collect();
        GaussianDoc {
            kind: "gaussian".into(),
            version: MODEL_DOC_VERSION,
            dim,
            mean: self.mean().iter().copied().collect(),
            cov,
            layout: self.layout().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = GaussianDoc::deserialize(d)?;
        GaussianModel::try_from(doc).map_err(D::Error::custom)
    }
}

impl TryFrom<GaussianDoc> for GaussianModel {
    type Error = ModelError;

    fn try_from(doc: GaussianDoc) -> Result<Self, ModelError> {
        if doc.kind != "gaussian" {
            return Err(ModelError::Document(format!("expected type \"gaussian\", got {:?}", doc.kind)));
        }
        if doc.version != MODEL_DOC_VERSION {
            return Err(ModelError::Document(format!("unsupported version {}", doc.version)));
        }
        if doc.mean.len() != doc.dim || doc.cov.len() != doc.dim * doc.dim {
            return Err(ModelError::Document("mean/cov length disagrees with dim".into()));
        }
        let mut m = GaussianModel::new(
            DVector::from_vec(doc.mean),
            DMatrix::from_row_slice(doc.dim, doc.dim, &doc.cov),
        )?;
        if !doc.layout.is_empty() {
            let cats: Vec<&str> = doc.layout.iter().map(|b| b.category.as_str()).collect();
            m = m.with_layout(&cats)?;
            if m.layout() != doc.layout.as_slice() {
                return Err(ModelError::Document("layout blocks must tile the dimensions in order".into()));
            }
        }
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct GmmDoc {
    #[serde(rename = "type")]
    kind: String,
    version: u32,
    weights: Vec<f64>,
    components: Vec<GaussianModel>,
}

impl Serialize for GmmModel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GmmDoc {
            kind: "gmm".into(),
            version: MODEL_DOC_VERSION,
            weights: self.weights.clone(),
            components: self.components.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GmmModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = GmmDoc::deserialize(d)?;
        if doc.kind != "gmm" || doc.version != MODEL_DOC_VERSION {
            return Err(D::Error::custom(format!(
                "expected gmm document version {MODEL_DOC_VERSION}, got {:?} v{}",
                doc.kind, doc.version
            )));
        }
        GmmModel::new(doc.weights, doc.components).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_document_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..8).map(|_| rand::Rng::random::<f64>(&mut rng) / 3.0).collect())
            .collect();
        let m = fit_gaussian(&samples, DEFAULT_RIDGE).unwrap().with_layout(&["a", "b"]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: GaussianModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(text.contains("\"type\":\"gaussian\""));
    }

    #[test]
    fn gaussian_document_rejects_wrong_version() {
        let m = GaussianModel::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let mut v = serde_json::to_value(&m).unwrap();
        v["version"] = 7.into();
        assert!(serde_json::from_value::<GaussianModel>(v).is_err());
    }

    #[test]
    fn gmm_document_round_trip() {
        let g = GaussianModel::new(DVector::from_vec(vec![0.1, 0.2]), DMatrix::identity(2, 2) * 0.3).unwrap();
        let m = GmmModel::new(vec![0.25, 0.75], vec![g.clone(), g]).unwrap();
        let back: GmmModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
