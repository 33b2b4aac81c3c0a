use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EngineConfig, TrainedSituationModel};
use crate::geometry::{BoxParams, ImageDims, PixelBox};
use crate::prob_models::{GaussianModel, BLOCK_LEN};

/// External support when no other category has been detected.
pub const NEUTRAL_EXTERNAL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Explorer,
    Refiner,
    Prior,
}

/// A scored `(category, box)` hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub category: usize,
    pub bbox: PixelBox,
    pub params: BoxParams,
    pub internal: f64,
    pub external: f64,
    pub total: f64,
    pub source: AgentKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub proposal: Proposal,
    /// Total support has fallen below the detection threshold since promotion.
    pub weak: bool,
}

/// Mutable state of one run on one image.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub image_id: String,
    pub dims: ImageDims,
    detections: Vec<Option<Detection>>,
    /// Per category: relationship marginal conditioned on the other
    /// categories' detections, or `None` when none exist.
    conditioned: Vec<Option<GaussianModel>>,
}

/// Survival function of the chi-square distribution with 4 degrees of freedom.
pub fn chi2_4_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let h = 0.5 * x;
    (-h).exp() * (1.0 + h)
}

pub fn total_support(internal: f64, external: f64, config: &EngineConfig) -> f64 {
    config.w_int * internal + config.w_ext * external
}

impl Workspace {
    pub fn new(image_id: impl Into<String>, dims: ImageDims, categories: usize) -> Self {
        Self {
            image_id: image_id.into(),
            dims,
            detections: vec![None; categories],
            conditioned: vec![None; categories],
        }
    }

    pub fn detections(&self) -> &[Option<Detection>] {
        &self.detections
    }

    pub fn detection(&self, category: usize) -> Option<&Detection> {
        self.detections[category].as_ref()
    }

    pub fn conditioned(&self, category: usize) -> Option<&GaussianModel> {
        self.conditioned[category].as_ref()
    }

    pub fn detected_count(&self) -> usize {
        self.detections.iter().flatten().count()
    }

    /// Every category holds a detection that is not weak.
    pub fn all_strong(&self) -> bool {
        self.detections.iter().all(|d| d.as_ref().is_some_and(|d| !d.weak))
    }

    /// Recomputes the conditioned marginals from the current detections.
    /// A numerically singular conditioning leaves that category unconditioned.
    pub fn refresh_context(&mut self, model: &TrainedSituationModel, config: &EngineConfig) {
        if config.uniform_mode {
            return;
        }
        for c in 0..self.detections.len() {
            let mut observed = BTreeMap::new();
            for (other, d) in self.detections.iter().enumerate() {
                if other == c {
                    continue;
                }
                if let Some(d) = d {
                    for (k, v) in d.proposal.params.to_array().into_iter().enumerate() {
                        observed.insert(other * BLOCK_LEN + k, v);
                    }
                }
            }
            self.conditioned[c] = if observed.is_empty() {
                None
            } else {
                model
                    .relationship
                    .condition(&observed)
                    .and_then(|g| g.marginal(&model.categories[c]))
                    .ok()
            };
        }
    }

    /// Fit of `params` to the relationship model conditioned on the other
    /// categories' detections: the chi-square(4) survival of the Mahalanobis
    /// distance, so 1 at the conditional mean and decaying with misfit.
    pub fn external_support(&self, category: usize, params: &BoxParams, config: &EngineConfig) -> f64 {
        if config.uniform_mode {
            return NEUTRAL_EXTERNAL;
        }
        match &self.conditioned[category] {
            None => NEUTRAL_EXTERNAL,
            Some(g) => g
                .mahalanobis_sq(&params.to_array())
                .map(chi2_4_survival)
                .unwrap_or(0.0),
        }
    }

    fn rescore_detections(&mut self, config: &EngineConfig) {
        for c in 0..self.detections.len() {
            let Some(d) = &self.detections[c] else { continue };
            let external = self.external_support(c, &d.proposal.params, config);
            let d = self.detections[c].as_mut().unwrap();
            d.proposal.external = external;
            d.proposal.total = total_support(d.proposal.internal, external, config);
            d.weak = d.proposal.total < config.tau_detect;
        }
    }

    /// Installs or replaces the category's detection. An empty slot takes any
    /// proposal above the detection threshold; an occupied slot is replaced
    /// only by a strictly higher total. After a change every detection is
    /// rescored against the new context.
    pub fn promote(&mut self, proposal: Proposal, model: &TrainedSituationModel, config: &EngineConfig) -> Promotion {
        let c = proposal.category;
        let outcome = match &self.detections[c] {
            None if proposal.total > config.tau_detect => Promotion::Installed,
            None => return Promotion::Rejected,
            Some(inc) if proposal.total > inc.proposal.total => Promotion::Replaced,
            Some(_) => return Promotion::Rejected,
        };
        self.detections[c] = Some(Detection { proposal, weak: false });
        self.refresh_context(model, config);
        self.rescore_detections(config);
        outcome
    }

    /// Padded geometric mean of detection totals; `pad` alone if any category is ungrounded.
    pub fn match_score(&self, config: &EngineConfig) -> f64 {
        match_score_from_totals(
            &self
                .detections
                .iter()
                .map(|d| d.as_ref().map(|d| d.proposal.total))
                .collect::<Vec<_>>(),
            config.pad,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Promotion {
    Installed,
    Replaced,
    Rejected,
}

/// `[prod (total_i + pad)]^(1/n)`, or `pad` when any slot is empty.
pub fn match_score_from_totals(totals: &[Option<f64>], pad: f64) -> f64 {
    if totals.is_empty() || totals.iter().any(Option::is_none) {
        return pad;
    }
    let n = totals.len() as f64;
    let log_sum: f64 = totals.iter().flatten().map(|t| (t + pad).ln()).sum();
    (log_sum / n).exp()
}
