use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EngineConfig, EngineError};
use crate::data_io::{situation_vector, AnnotationRecord, SituationSpec};
use crate::features::FeatureProvider;
use crate::geometry::to_params;
use crate::learners::{build_crops, train_localizer, train_refiner, CropSource, LinearModel, RefinerModel};
use crate::prob_models::{fit_gaussian, fit_lognormal, GaussianModel, LogNormalModel, MODEL_DOC_VERSION};

pub const SITUATION_MODEL_TYPE: &str = "situation_model";

/// Independent log-normal priors over one category's size and shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeShapePrior {
    pub area: LogNormalModel,
    pub aspect: LogNormalModel,
}

/// Everything learned from the training set for one situation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct TrainedSituationModel {
    pub categories: Vec<String>,
    /// Joint Gaussian over all categories' (cx, cy, area_ratio, aspect_ratio).
    pub relationship: GaussianModel,
    pub size_shape_priors: BTreeMap<String, SizeShapePrior>,
    pub localizers: BTreeMap<String, LinearModel>,
    pub refiners: BTreeMap<String, RefinerModel>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    #[serde(rename = "type")]
    kind: String,
    version: u32,
    categories: Vec<String>,
    relationship: GaussianModel,
    size_shape_priors: BTreeMap<String, SizeShapePrior>,
    localizers: BTreeMap<String, LinearModel>,
    refiners: BTreeMap<String, RefinerModel>,
}

impl From<TrainedSituationModel> for ModelDoc {
    fn from(m: TrainedSituationModel) -> Self {
        ModelDoc {
            kind: SITUATION_MODEL_TYPE.into(),
            version: MODEL_DOC_VERSION,
            categories: m.categories,
            relationship: m.relationship,
            size_shape_priors: m.size_shape_priors,
            localizers: m.localizers,
            refiners: m.refiners,
        }
    }
}

impl TryFrom<ModelDoc> for TrainedSituationModel {
    type Error = EngineError;

    fn try_from(doc: ModelDoc) -> Result<Self, EngineError> {
        if doc.kind != SITUATION_MODEL_TYPE || doc.version != MODEL_DOC_VERSION {
            return Err(EngineError::Document(format!(
                "expected {SITUATION_MODEL_TYPE} v{MODEL_DOC_VERSION}, got {} v{}",
                doc.kind, doc.version
            )));
        }
        let m = TrainedSituationModel {
            categories: doc.categories,
            relationship: doc.relationship,
            size_shape_priors: doc.size_shape_priors,
            localizers: doc.localizers,
            refiners: doc.refiners,
        };
        m.validate()?;
        Ok(m)
    }
}

impl TrainedSituationModel {
    /// Category sets must agree across every component and the relationship layout.
    pub fn validate(&self) -> Result<(), EngineError> {
        let layout: Vec<&str> = self.relationship.layout().iter().map(|b| b.category.as_str()).collect();
        let cats: Vec<&str> = self.categories.iter().map(String::as_str).collect();
        if layout != cats {
            return Err(EngineError::Document("relationship layout does not match categories".into()));
        }
        for c in &self.categories {
            if !self.size_shape_priors.contains_key(c) || !self.localizers.contains_key(c) || !self.refiners.contains_key(c)
            {
                return Err(EngineError::Document(format!("category {c:?} is missing a learned component")));
            }
        }
        let n = self.categories.len();
        if self.size_shape_priors.len() != n || self.localizers.len() != n || self.refiners.len() != n {
            return Err(EngineError::Document("learned components name unknown categories".into()));
        }
        Ok(())
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn to_json(&self) -> Result<String, EngineError> {
        serde_json::to_string_pretty(self).map_err(|e| EngineError::Document(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        serde_json::from_str(text).map_err(|e| EngineError::Document(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| EngineError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Io(e.to_string()))?;
        Self::from_json(&text)
    }
}

/// Learns the relationship Gaussian, size/shape priors, localizers and
/// refiners from positive training images.
pub fn train_situation(
    annotations: &[AnnotationRecord],
    situation: &SituationSpec,
    provider: &dyn FeatureProvider,
    config: &EngineConfig,
) -> Result<TrainedSituationModel, EngineError> {
    situation.validate()?;
    let cats = &situation.categories;
    if annotations.is_empty() {
        return Err(EngineError::Training("no training images".into()));
    }
    let mut vectors = Vec::with_capacity(annotations.len());
    for r in annotations {
        if !r.is_positive {
            return Err(EngineError::Training(format!("training image {:?} is not positive", r.image_id)));
        }
        r.validate(situation)?;
        let v = situation_vector(r, cats)
            .ok_or_else(|| EngineError::Training(format!("image {:?} is missing a situation box", r.image_id)))?;
        vectors.push(v);
    }

    let relationship = fit_gaussian(&vectors, config.cov_ridge)?.with_layout(cats)?;

    let mut size_shape_priors = BTreeMap::new();
    for c in cats {
        let params: Vec<_> = annotations
            .iter()
            .map(|r| to_params(r.box_for(c).expect("validated above"), r.dims))
            .collect::<Result<_, _>>()
            .map_err(|e| EngineError::Training(e.to_string()))?;
        let area: Vec<f64> = params.iter().map(|p| p.area_ratio).collect();
        let aspect: Vec<f64> = params.iter().map(|p| p.aspect_ratio).collect();
        size_shape_priors.insert(
            c.clone(),
            SizeShapePrior {
                area: fit_lognormal(&area)?,
                aspect: fit_lognormal(&aspect)?,
            },
        );
    }

    let sources: Vec<CropSource<'_>> = annotations
        .iter()
        .flat_map(|r| {
            cats.iter().map(move |c| CropSource {
                image_id: &r.image_id,
                dims: r.dims,
                category: c,
                truth: *r.box_for(c).expect("validated above"),
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let crops = build_crops(&sources, provider, &mut rng, config.crops_per_box)?;

    let mut localizers = BTreeMap::new();
    let mut refiners = BTreeMap::new();
    for c in cats {
        localizers.insert(c.clone(), train_localizer(c, &crops, config.lambda)?);
        refiners.insert(c.clone(), train_refiner(c, &crops, config.lambda)?);
    }

    Ok(TrainedSituationModel {
        categories: cats.clone(),
        relationship,
        size_shape_priors,
        localizers,
        refiners,
    })
}
