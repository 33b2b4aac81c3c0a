use rand::Rng;

use super::{EngineConfig, Proposal, TrainedSituationModel};
use crate::data_io::PriorProposal;
use crate::geometry::PixelBox;

#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    /// Picks a category and samples a box from its current distributions.
    Explorer,
    /// Tries to improve an existing proposal; `depth` counts refinements in the chain.
    Refiner { target: Proposal, depth: usize },
    /// Proposes a precomputed detector box.
    Prior {
        category: usize,
        bbox: PixelBox,
        detector_confidence: f64,
    },
}

/// Agents waiting to run. Selection is uniform; removal is `swap_remove`,
/// so pool order is a deterministic function of the draw sequence.
#[derive(Debug, Clone, Default)]
pub struct AgentPool {
    agents: Vec<Agent>,
}

impl AgentPool {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn push(&mut self, agent: Agent) {
        self.agents.push(agent);
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn count_explorers(&self) -> usize {
        self.agents.iter().filter(|a| matches!(a, Agent::Explorer)).count()
    }

    pub fn take_random<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Agent> {
        if self.agents.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.agents.len());
        Some(self.agents.swap_remove(i))
    }
}

/// Up to `p` highest-confidence priors per category plus `p_prime` explorers.
/// Priors for categories outside the model are ignored; ties keep file order.
pub fn init_pool(priors: &[PriorProposal], model: &TrainedSituationModel, config: &EngineConfig) -> AgentPool {
    let mut pool = AgentPool::default();
    for (ci, name) in model.categories.iter().enumerate() {
        let mut mine: Vec<&PriorProposal> = priors.iter().filter(|p| &p.category == name).collect();
        mine.sort_by(|a, b| b.detector_confidence.total_cmp(&a.detector_confidence));
        for p in mine.into_iter().take(config.p) {
            pool.push(Agent::Prior {
                category: ci,
                bbox: p.bbox,
                detector_confidence: p.detector_confidence,
            });
        }
    }
    for _ in 0..config.p_prime {
        pool.push(Agent::Explorer);
    }
    pool
}
