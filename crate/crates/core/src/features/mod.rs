//! Feature provision for crops: a synthetic oracle for end-to-end runs, and a
//! file-backed store for features computed elsewhere.

mod oracle;
mod store;

pub use oracle::{
    latent_dim, Distractor, OracleConfig, OracleFeatures, SyntheticScene, DEFAULT_FEATURE_DIM, DEFAULT_NOISE_SIGMA,
};
pub use store::{dequantize, quantize, FeatureStore, QuantKey, STORE_MAGIC, STORE_VERSION};

use crate::geometry::{GeometryError, PixelBox};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("no stored feature within one quantization step for image {0:?}")]
    NoNearbyKey(String),
    #[error("feature dim {dim} is smaller than the latent size {latent}")]
    DimTooSmall { dim: usize, latent: usize },
    #[error("noise sigma must be nonnegative, got {0}")]
    BadNoise(f64),
    #[error("feature length {found} does not match store dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("malformed feature store: {0}")]
    Format(String),
    #[error("truncated feature blob: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<std::io::Error> for FeatureError {
    fn from(e: std::io::Error) -> Self {
        FeatureError::Io(e.to_string())
    }
}

/// Source of fixed-length crop features. Implementations must be
/// deterministic: the same `(image_id, box)` always yields the same vector.
pub trait FeatureProvider: Send + Sync {
    fn feature_dim(&self) -> usize;
    fn features(&self, image_id: &str, b: &PixelBox) -> Result<Vec<f64>, FeatureError>;
}
