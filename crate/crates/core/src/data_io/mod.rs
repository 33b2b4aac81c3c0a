//! Dataset schemas, JSON-lines loaders/writers, and the synthetic corpus
//! generator.
//!
//! Every JSON-lines file starts with a header line
//! `{"format":"situate.<kind>","version":1}`; records follow one per line with
//! fields in declaration order.

mod records;
mod synth;

pub use records::{
    group_priors, load_annotations, load_priors, load_priors_flat, load_scenes, save_annotations, save_priors,
    save_scenes, validate_annotations, AnnotationRecord, LabeledBox, PriorProposal, SituationSpec,
    ANNOTATIONS_FORMAT, FORMAT_VERSION, PRIORS_FORMAT, SCENES_FORMAT,
};
pub use synth::{
    default_planted, generate_synthetic, situation_vector, DetectorNoise, NegativeFlavor, SynthSpec, SyntheticCorpus,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}
