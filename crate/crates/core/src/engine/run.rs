use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agents::{init_pool, Agent, AgentPool};
use super::workspace::{total_support, AgentKind, Promotion, Proposal, Workspace};
use super::{EngineConfig, EngineError, TrainedSituationModel};
use crate::data_io::PriorProposal;
use crate::features::{FeatureError, FeatureProvider};
use crate::geometry::{from_params, to_params, BoxParams, ImageDims, PixelBox};
use crate::learners::apply_refinement;
use crate::util::image_seed;

/// What happened to the proposal an agent produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Below both thresholds; dropped without follow-up.
    Discarded,
    /// Not detected, but a refiner was queued.
    MarkedForRefinement,
    /// Filled an empty category slot.
    Detected,
    /// Displaced the category's previous detection.
    Replaced,
    /// Above the detection threshold but not better than the incumbent.
    KeptIncumbent,
    /// The feature provider could not serve the box.
    FeatureUnavailable,
}

/// One agent execution, as written to the JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub iteration: usize,
    pub agent: AgentKind,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub internal: f64,
    pub external: f64,
    pub total: f64,
    pub action: Action,
    pub spawned_refiner: bool,
    /// Detections in the workspace after this event.
    pub detections: usize,
    /// Match score of the workspace after this event.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub internal: f64,
    pub external: f64,
    pub total: f64,
    pub weak: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub initial_pool: usize,
    pub executed: usize,
    pub spawned_refiners: usize,
    pub explorer_replacements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub image_id: String,
    pub score: f64,
    pub detections: Vec<DetectionRecord>,
    pub trace: Vec<TraceEvent>,
    pub stats: PoolStats,
}

/// Inputs for one test image.
#[derive(Debug, Clone, Copy)]
pub struct ImageInput<'a> {
    pub image_id: &'a str,
    pub dims: ImageDims,
    pub priors: &'a [PriorProposal],
}

/// A run in progress. [`run_image`] drives it to completion; stepping it by
/// hand exposes intermediate workspaces.
pub struct Run<'a> {
    workspace: Workspace,
    pool: AgentPool,
    model: &'a TrainedSituationModel,
    provider: &'a dyn FeatureProvider,
    config: &'a EngineConfig,
    stats: PoolStats,
    trace: Vec<TraceEvent>,
}

impl<'a> Run<'a> {
    pub fn new(
        input: ImageInput<'_>,
        model: &'a TrainedSituationModel,
        provider: &'a dyn FeatureProvider,
        config: &'a EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let pool = init_pool(input.priors, model, config);
        Ok(Self {
            workspace: Workspace::new(input.image_id, input.dims, model.categories.len()),
            stats: PoolStats {
                initial_pool: pool.len(),
                ..Default::default()
            },
            pool,
            model,
            provider,
            config,
            trace: Vec::new(),
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn pool(&self) -> &AgentPool {
        &self.pool
    }

    pub fn stats(&self) -> PoolStats {
        self.stats
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// Stops once every category has a non-weak detection or the agent budget is spent.
    pub fn is_finished(&self) -> bool {
        self.stats.executed >= self.config.max_iterations || self.workspace.all_strong() || self.pool.is_empty()
    }

    /// Runs one uniformly chosen agent and removes it from the pool. A run
    /// explorer is replaced by a fresh one; spawned refiners join the pool.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<&TraceEvent> {
        let agent = self.pool.take_random(rng)?;
        let iteration = self.stats.executed;
        self.stats.executed += 1;
        let event = match agent {
            Agent::Explorer => {
                self.pool.push(Agent::Explorer);
                self.stats.explorer_replacements += 1;
                let category = rng.random_range(0..self.model.categories.len());
                let params = self.sample_params(category, rng);
                let bbox = from_params(&params, self.workspace.dims);
                self.evaluate(iteration, AgentKind::Explorer, category, bbox, 1)
            }
            Agent::Prior { category, bbox, .. } => {
                let bbox = bbox.clip(self.workspace.dims);
                self.evaluate(iteration, AgentKind::Prior, category, bbox, 1)
            }
            Agent::Refiner { target, depth } => self.refine(iteration, &target, depth),
        };
        self.trace.push(event);
        self.trace.last()
    }

    pub fn finish(self) -> RunResult {
        let detections = self
            .workspace
            .detections()
            .iter()
            .enumerate()
            .filter_map(|(c, d)| {
                d.as_ref().map(|d| DetectionRecord {
                    category: self.model.categories[c].clone(),
                    bbox: d.proposal.bbox,
                    internal: d.proposal.internal,
                    external: d.proposal.external,
                    total: d.proposal.total,
                    weak: d.weak,
                })
            })
            .collect();
        RunResult {
            image_id: self.workspace.image_id.clone(),
            score: self.workspace.match_score(self.config),
            detections,
            trace: self.trace,
            stats: self.stats,
        }
    }

    /// Explorer sampling: uniform lesion, priors before any context exists,
    /// and the conditioned joint marginal afterwards.
    fn sample_params<R: Rng + ?Sized>(&self, category: usize, rng: &mut R) -> BoxParams {
        let cfg = self.config;
        if cfg.uniform_mode {
            return BoxParams {
                cx: rng.random(),
                cy: rng.random(),
                area_ratio: rng.random_range(cfg.uniform_area_range.0..=cfg.uniform_area_range.1),
                aspect_ratio: rng.random_range(cfg.uniform_aspect_range.0..=cfg.uniform_aspect_range.1),
            };
        }
        if let Some(g) = self.workspace.conditioned(category) {
            if let Ok(v) = g.sample(rng) {
                return sanitize(BoxParams::from_slice(v.as_slice()));
            }
        }
        let prior = &self.model.size_shape_priors[&self.model.categories[category]];
        sanitize(BoxParams {
            cx: rng.random(),
            cy: rng.random(),
            area_ratio: prior.area.sample(rng),
            aspect_ratio: prior.aspect.sample(rng),
        })
    }

    fn score(&self, category: usize, bbox: PixelBox, source: AgentKind) -> Result<Proposal, FeatureError> {
        let params = to_params(&bbox, self.workspace.dims)?;
        let feature = self.provider.features(&self.workspace.image_id, &bbox)?;
        let localizer = &self.model.localizers[&self.model.categories[category]];
        let internal = localizer
            .predict(&feature)
            .map_err(|_| FeatureError::DimMismatch {
                expected: localizer.dim(),
                found: feature.len(),
            })?
            .clamp(0.0, 1.0);
        let external = self.workspace.external_support(category, &params, self.config);
        Ok(Proposal {
            category,
            bbox,
            params,
            internal,
            external,
            total: total_support(internal, external, self.config),
            source,
        })
    }

    /// Scores a box, queues a refiner at `spawn_depth` when internal support
    /// clears the refinement threshold, and tries promotion when total support
    /// clears the detection threshold.
    fn evaluate(
        &mut self,
        iteration: usize,
        kind: AgentKind,
        category: usize,
        bbox: PixelBox,
        spawn_depth: usize,
    ) -> TraceEvent {
        let proposal = match self.score(category, bbox, kind) {
            Ok(p) => p,
            Err(_) => return self.event(iteration, kind, category, bbox, None, Action::FeatureUnavailable, false),
        };
        let spawned = proposal.internal > self.config.tau_refine && spawn_depth <= self.config.r_max;
        if spawned {
            self.pool.push(Agent::Refiner {
                target: proposal.clone(),
                depth: spawn_depth,
            });
            self.stats.spawned_refiners += 1;
        }
        let scored = (proposal.internal, proposal.external, proposal.total);
        let action = if proposal.total > self.config.tau_detect {
            match self.workspace.promote(proposal, self.model, self.config) {
                Promotion::Installed => Action::Detected,
                Promotion::Replaced => Action::Replaced,
                Promotion::Rejected => Action::KeptIncumbent,
            }
        } else if spawned {
            Action::MarkedForRefinement
        } else {
            Action::Discarded
        };
        self.event(iteration, kind, category, bbox, Some(scored), action, spawned)
    }

    fn refine(&mut self, iteration: usize, target: &Proposal, depth: usize) -> TraceEvent {
        let category = target.category;
        let name = &self.model.categories[category];
        let refined = self
            .provider
            .features(&self.workspace.image_id, &target.bbox)
            .ok()
            .and_then(|f| apply_refinement(&self.model.refiners[name], &f, &target.bbox, self.workspace.dims).ok());
        match refined {
            Some(bbox) => self.evaluate(iteration, AgentKind::Refiner, category, bbox, depth + 1),
            None => self.event(
                iteration,
                AgentKind::Refiner,
                category,
                target.bbox,
                None,
                Action::FeatureUnavailable,
                false,
            ),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn event(
        &self,
        iteration: usize,
        agent: AgentKind,
        category: usize,
        bbox: PixelBox,
        scored: Option<(f64, f64, f64)>,
        action: Action,
        spawned_refiner: bool,
    ) -> TraceEvent {
        let (internal, external, total) = scored.unwrap_or((0.0, 0.0, 0.0));
        TraceEvent {
            iteration,
            agent,
            category: self.model.categories[category].clone(),
            bbox,
            internal,
            external,
            total,
            action,
            spawned_refiner,
            detections: self.workspace.detected_count(),
            score: self.workspace.match_score(self.config),
        }
    }
}

/// Keeps sampled parameters inside the domain `from_params` accepts.
fn sanitize(p: BoxParams) -> BoxParams {
    let finite = |v: f64, fallback: f64| if v.is_finite() { v } else { fallback };
    BoxParams {
        cx: finite(p.cx, 0.5).clamp(0.0, 1.0),
        cy: finite(p.cy, 0.5).clamp(0.0, 1.0),
        area_ratio: finite(p.area_ratio, 1e-4).clamp(1e-4, 1.0),
        aspect_ratio: finite(p.aspect_ratio, 1.0).clamp(0.05, 20.0),
    }
}

/// Grounds the situation in one image and scores it.
pub fn run_image<R: Rng + ?Sized>(
    input: ImageInput<'_>,
    model: &TrainedSituationModel,
    provider: &dyn FeatureProvider,
    config: &EngineConfig,
    rng: &mut R,
) -> Result<RunResult, EngineError> {
    let mut run = Run::new(input, model, provider, config)?;
    while !run.is_finished() {
        run.step(rng);
    }
    Ok(run.finish())
}

/// [`run_image`] with the image's own random stream derived from `seed`.
pub fn run_image_seeded(
    input: ImageInput<'_>,
    model: &TrainedSituationModel,
    provider: &dyn FeatureProvider,
    config: &EngineConfig,
    seed: u64,
) -> Result<RunResult, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, input.image_id));
    run_image(input, model, provider, config, &mut rng)
}
