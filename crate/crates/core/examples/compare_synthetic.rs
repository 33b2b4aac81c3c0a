//! Trains on the default synthetic corpus and prints the four-method recall table.
//!
//! cargo run --release -p situate-core --example compare_synthetic [seeds]

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use situate_core::data_io::{generate_synthetic, group_priors, SynthSpec};
use situate_core::engine::{train_situation, EngineConfig};
use situate_core::evaluation::{compare_methods, fit_pairwise_gmms, CompareInputs, DEFAULT_IRSG_TOP_K, DEFAULT_N_GRID};
use situate_core::features::{OracleConfig, OracleFeatures};
use situate_core::prob_models::DEFAULT_COMPONENTS;

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let t = Instant::now();
    let spec = SynthSpec::default_with_seed(7);
    let corpus = generate_synthetic(&spec).expect("synthetic corpus");
    let oracle = OracleFeatures::new(
        OracleConfig::for_categories(spec.situation.categories.clone(), spec.seed),
        corpus.scenes.clone(),
    )
    .expect("oracle");
    let config = EngineConfig::default();
    let model = train_situation(&corpus.train, &spec.situation, &oracle, &config).expect("training");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gmms = fit_pairwise_gmms(&corpus.train, &spec.situation.categories, DEFAULT_COMPONENTS, &mut rng).expect("gmms");
    println!("setup {:.2?}", t.elapsed());
    let priors = group_priors(corpus.priors.clone());
    let seeds: Vec<u64> = (0..seeds).collect();
    let t = Instant::now();
    let report = compare_methods(&CompareInputs {
        test: &corpus.test,
        priors: &priors,
        model: &model,
        provider: &oracle,
        config: &config,
        gmms: &gmms,
        seeds: &seeds,
        ns: &DEFAULT_N_GRID,
        irsg_top_k: DEFAULT_IRSG_TOP_K,
    })
    .expect("compare");
    println!("compare {:.2?}", t.elapsed());
    print!("{}", report.to_text());
}
