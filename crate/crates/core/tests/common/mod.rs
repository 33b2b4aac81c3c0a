#![allow(dead_code)]

use std::sync::OnceLock;

use situate_core::data_io::{generate_synthetic, group_priors, PriorProposal, SynthSpec, SyntheticCorpus};
use situate_core::engine::{train_situation, EngineConfig, ImageInput, TrainedSituationModel};
use situate_core::features::{OracleConfig, OracleFeatures};
use std::collections::BTreeMap;

pub struct Fixture {
    pub spec: SynthSpec,
    pub corpus: SyntheticCorpus,
    pub oracle: OracleFeatures,
    pub model: TrainedSituationModel,
    pub priors: BTreeMap<String, Vec<PriorProposal>>,
}

impl Fixture {
    pub fn build(seed: u64, noise_sigma: f64) -> Self {
        let spec = SynthSpec::default_with_seed(seed);
        let corpus = generate_synthetic(&spec).unwrap();
        let mut oc = OracleConfig::for_categories(spec.situation.categories.clone(), seed);
        oc.noise_sigma = noise_sigma;
        let oracle = OracleFeatures::new(oc, corpus.scenes.clone()).unwrap();
        let model = train_situation(&corpus.train, &spec.situation, &oracle, &EngineConfig::default()).unwrap();
        let priors = group_priors(corpus.priors.clone());
        Self {
            spec,
            corpus,
            oracle,
            model,
            priors,
        }
    }

    pub fn input(&self, i: usize) -> ImageInput<'_> {
        let r = &self.corpus.test[i];
        ImageInput {
            image_id: &r.image_id,
            dims: r.dims,
            priors: self.priors.get(&r.image_id).map(Vec::as_slice).unwrap_or(&[]),
        }
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.corpus.test.len()).filter(|&i| self.corpus.test[i].is_positive)
    }
}

/// Default corpus with default oracle noise, built once per test binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| Fixture::build(7, 0.05))
}
