//! The grounding loop: a workspace of provisional detections, a pool of
//! explorer, refiner and prior agents, and the match score of a run.

mod agents;
mod config;
mod model;
mod run;
mod workspace;

pub use agents::{init_pool, Agent, AgentPool};
pub use config::EngineConfig;
pub use model::{train_situation, SizeShapePrior, TrainedSituationModel, SITUATION_MODEL_TYPE};
pub use run::{
    run_image, run_image_seeded, Action, DetectionRecord, ImageInput, PoolStats, Run, RunResult, TraceEvent,
};
pub use workspace::{
    chi2_4_survival, match_score_from_totals, total_support, AgentKind, Detection, Promotion, Proposal, Workspace,
    NEUTRAL_EXTERNAL,
};

pub use crate::util::image_seed;

use crate::data_io::DataError;
use crate::features::FeatureError;
use crate::learners::LearnError;
use crate::prob_models::ModelError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed model document: {0}")]
    Document(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("training: {0}")]
    Training(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Data(#[from] DataError),
}
