use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use situate_core::data_io::{
    default_planted, generate_synthetic, load_annotations, load_priors, save_annotations, save_priors, save_scenes,
    AnnotationRecord, DetectorNoise, PriorProposal, SituationSpec, SynthSpec,
};
use situate_core::engine::{
    image_seed, train_situation, DetectionRecord, EngineConfig, ImageInput, Run, TrainedSituationModel,
};
use situate_core::evaluation::{
    aggregate_runs, compare_methods, fit_pairwise_gmms, score_irsg, score_situate, score_topbox, CompareInputs,
    Ordering, RecallTable, ScoredImage, DEFAULT_N_GRID,
};
use situate_core::features::{FeatureProvider, OracleConfig, DEFAULT_FEATURE_DIM, DEFAULT_NOISE_SIGMA};
use situate_core::geometry::ImageDims;
use situate_core::prob_models::{GaussianModel, DEFAULT_COMPONENTS};

use crate::error::CliError;
use crate::inputs::{
    load_features, load_situation, parse_json, with_path, read_text, to_json, write_text, Manifest, ManifestEntry, OracleDoc,
    DOC_VERSION, MANIFEST_TYPE, ORACLE_DOC_TYPE,
};
use crate::svg::{render, select_iterations, Snapshot};
use crate::{
    Command, CompareArgs, EvalArgs, Method, RankArgs, RunArgs, SynthArgs, TestInputs, TrainArgs,
};

const DEFAULT_SEED_COUNT: u64 = 10;

pub fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => cmd_synth(&a, stdout),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Run(a) => cmd_run(&a, stdout),
        Command::Rank(a) => buffered(a.jobs, stdout, |out| cmd_rank(&a, out)),
        Command::Eval(a) => buffered(a.jobs, stdout, |out| cmd_eval(&a, out)),
        Command::Compare(a) => buffered(a.jobs, stdout, |out| cmd_compare(&a, out)),
    }
}

/// Runs `f` on a pool of `jobs` threads, then forwards what it printed.
fn buffered(
    jobs: Option<usize>,
    stdout: &mut dyn Write,
    f: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError> + Send,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    let result = with_jobs(jobs, || f(&mut buf));
    stdout.write_all(&buf)?;
    result
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        _ => f(),
    }
}

/// Corpus settings file for `synth`. Omitted fields keep the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthFile {
    pub name: String,
    pub categories: Vec<String>,
    pub n_train: usize,
    pub n_pos_test: usize,
    pub n_neg_test: usize,
    pub width: u32,
    pub height: u32,
    pub distractors: (usize, usize),
    pub detector: DetectorNoise,
    pub priors_per_category: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Relationship Gaussian over the categories' box parameters; the
    /// built-in three-category model when absent.
    pub planted: Option<GaussianModel>,
}

impl Default for SynthFile {
    fn default() -> Self {
        let d = SynthSpec::default_with_seed(0);
        Self {
            name: d.situation.name,
            categories: d.situation.categories,
            n_train: d.n_train,
            n_pos_test: d.n_pos_test,
            n_neg_test: d.n_neg_test,
            width: d.dims.width,
            height: d.dims.height,
            distractors: d.distractors,
            detector: d.detector,
            priors_per_category: d.priors_per_category,
            seed: 0,
            feature_dim: DEFAULT_FEATURE_DIM,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            planted: None,
        }
    }
}

impl SynthFile {
    pub fn to_spec(&self) -> Result<SynthSpec, CliError> {
        let situation = SituationSpec::new(self.name.clone(), self.categories.clone())?;
        let planted = match &self.planted {
            Some(g) => g.clone().with_layout(&self.categories)?,
            None => default_planted(&self.categories)?,
        };
        let spec = SynthSpec {
            situation,
            n_train: self.n_train,
            n_pos_test: self.n_pos_test,
            n_neg_test: self.n_neg_test,
            planted,
            distractors: self.distractors,
            detector: self.detector.clone(),
            priors_per_category: self.priors_per_category,
            dims: ImageDims::new(self.width, self.height).map_err(|e| CliError::Validation(e.to_string()))?,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub const SITUATION_FILE: &str = "situation.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const PRIORS_FILE: &str = "priors.jsonl";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const ORACLE_FILE: &str = "oracle.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn cmd_synth(a: &SynthArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut file: SynthFile = match &a.spec {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => SynthFile::default(),
    };
    if let Some(s) = a.seed {
        file.seed = s;
    }
    let spec = file.to_spec()?;
    let corpus = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(a.out.display(), e))?;
    let out = |name: &str| a.out.join(name);

    write_text(&out(SITUATION_FILE), &to_json(&spec.situation))?;
    save_annotations(&out(TRAIN_FILE), &corpus.train)?;
    save_annotations(&out(TEST_FILE), &corpus.test)?;
    save_priors(&out(PRIORS_FILE), &corpus.priors)?;
    save_scenes(&out(SCENES_FILE), &corpus.scenes)?;
    let oracle = OracleDoc {
        kind: ORACLE_DOC_TYPE.into(),
        version: DOC_VERSION,
        config: OracleConfig {
            dim: file.feature_dim,
            noise_sigma: file.noise_sigma,
            projection_seed: spec.seed,
            categories: spec.situation.categories.clone(),
        },
        scenes: SCENES_FILE.into(),
    };
    write_text(&out(ORACLE_FILE), &to_json(&oracle))?;
    let manifest = Manifest {
        kind: MANIFEST_TYPE.into(),
        version: DOC_VERSION,
        seed: spec.seed,
        files: [
            ("situation", SITUATION_FILE),
            ("train_annotations", TRAIN_FILE),
            ("test_annotations", TEST_FILE),
            ("priors", PRIORS_FILE),
            ("scenes", SCENES_FILE),
            ("features", ORACLE_FILE),
        ]
        .into_iter()
        .map(|(role, path)| ManifestEntry {
            role: role.into(),
            path: path.into(),
        })
        .collect(),
    };
    write_text(&out(MANIFEST_FILE), &to_json(&manifest))?;
    writeln!(
        stdout,
        "wrote {} train, {} test images and {} priors to {}",
        corpus.train.len(),
        corpus.test.len(),
        corpus.priors.len(),
        a.out.display()
    )?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let situation = load_situation(&a.spec)?;
    let config = a.engine.resolve(a.seed)?;
    let annotations = with_path(&a.annotations, load_annotations(&a.annotations, &situation))?;
    let provider = load_features(&a.features)?;
    let model = train_situation(&annotations, &situation, provider.as_ref(), &config)?;
    model.save(&a.out)?;
    writeln!(stdout, "trained {} categories on {} images", model.categories.len(), annotations.len())?;
    Ok(())
}

/// Everything a test-time command needs.
struct Loaded {
    model: TrainedSituationModel,
    test: Vec<AnnotationRecord>,
    priors: BTreeMap<String, Vec<PriorProposal>>,
    provider: Box<dyn FeatureProvider>,
}

fn load_test_inputs(t: &TestInputs) -> Result<Loaded, CliError> {
    let model = with_path(&t.model, TrainedSituationModel::load(&t.model))?;
    let situation = SituationSpec::new("model", model.categories.clone())?;
    let test = with_path(&t.annotations, load_annotations(&t.annotations, &situation))?;
    let priors = with_path(&t.priors, load_priors(&t.priors))?;
    let provider = load_features(&t.features)?;
    if provider.feature_dim() != model.localizers.values().next().map_or(0, |l| l.dim()) {
        return Err(CliError::Validation(format!(
            "feature dimension {} does not match the model",
            provider.feature_dim()
        )));
    }
    Ok(Loaded {
        model,
        test,
        priors,
        provider,
    })
}

fn priors_of<'a>(priors: &'a BTreeMap<String, Vec<PriorProposal>>, id: &str) -> &'a [PriorProposal] {
    priors.get(id).map(Vec::as_slice).unwrap_or(&[])
}

#[derive(Serialize)]
struct RunSummary<'a> {
    image_id: &'a str,
    seed: u64,
    score: f64,
    iterations: usize,
    detections: &'a [DetectionRecord],
}

fn cmd_run(a: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let l = load_test_inputs(&a.inputs)?;
    let config = a.engine.resolve(None)?;
    let record = l
        .test
        .iter()
        .find(|r| r.image_id == a.image_id)
        .ok_or_else(|| CliError::Validation(format!("unknown image id {:?}", a.image_id)))?;
    let input = ImageInput {
        image_id: &record.image_id,
        dims: record.dims,
        priors: priors_of(&l.priors, &record.image_id),
    };

    // same stream as run_image_seeded, stepped by hand to capture snapshots
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(a.seed, &record.image_id));
    let mut run = Run::new(input, &l.model, l.provider.as_ref(), &config)?;
    let mut snapshots = Vec::new();
    while !run.is_finished() {
        let Some(ev) = run.step(&mut rng).cloned() else { break };
        if a.svg.is_some() {
            snapshots.push(Snapshot::capture(&run, &ev));
        }
    }
    let result = run.finish();

    if let Some(path) = &a.trace {
        let mut text = String::new();
        for e in &result.trace {
            text.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            text.push('\n');
        }
        write_text(path, &text)?;
    }
    if let Some(path) = &a.svg {
        let chosen: Vec<Snapshot> = select_iterations(snapshots.len(), a.panels)
            .into_iter()
            .map(|i| snapshots[i].clone())
            .collect();
        let truth: Vec<_> = record.boxes.iter().map(|b| b.bbox).collect();
        write_text(path, &render(&record.image_id, record.dims, &l.model.categories, &truth, &chosen))?;
    }
    let summary = RunSummary {
        image_id: &result.image_id,
        seed: a.seed,
        score: result.score,
        iterations: result.stats.executed,
        detections: &result.detections,
    };
    match &a.out {
        Some(p) => write_text(p, &to_json(&summary))?,
        None => write!(stdout, "{}", to_json(&summary))?,
    }
    Ok(())
}

/// Ranked CSV: descending score; among ties negatives come first, then image id.
pub fn ranking_csv(scored: &[ScoredImage]) -> Result<String, CliError> {
    let mut rows: Vec<&ScoredImage> = scored.iter().collect();
    rows.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.is_positive.cmp(&b.is_positive))
            .then(a.image_id.cmp(&b.image_id))
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "image_id", "score", "is_positive"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([(i + 1).to_string(), r.image_id.clone(), r.score.to_string(), r.is_positive.to_string()])
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn ranking_file_name(seed: u64) -> String {
    format!("ranking-seed-{seed}.csv")
}

fn cmd_rank(a: &RankArgs, stdout: &mut Vec<u8>) -> Result<(), CliError> {
    let l = load_test_inputs(&a.inputs)?;
    let config = a.engine.resolve(None)?;
    let seeds = a.seeds.resolve(&[config.seed]);
    if a.out.is_none() && seeds.len() > 1 {
        return Err(CliError::Validation("several seeds need --out <dir>".into()));
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    for seed in seeds {
        let scored = score_situate(&l.test, &l.priors, &l.model, l.provider.as_ref(), &config, seed)?;
        let csv = ranking_csv(&scored)?;
        match &a.out {
            Some(dir) => write_text(&dir.join(ranking_file_name(seed)), &csv)?,
            None => write!(stdout, "{csv}")?,
        }
    }
    Ok(())
}

fn fit_gmms(
    path: &Path,
    model: &TrainedSituationModel,
    seed: u64,
) -> Result<situate_core::evaluation::PairwiseGmms, CliError> {
    let situation = SituationSpec::new("model", model.categories.clone())?;
    let train = with_path(path, load_annotations(path, &situation))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(fit_pairwise_gmms(&train, &model.categories, DEFAULT_COMPONENTS, &mut rng)?)
}

fn default_seeds() -> Vec<u64> {
    (0..DEFAULT_SEED_COUNT).collect()
}

fn cmd_eval(a: &EvalArgs, stdout: &mut Vec<u8>) -> Result<(), CliError> {
    let l = load_test_inputs(&a.inputs)?;
    let config = a.engine.resolve(None)?;
    let table = match a.method {
        Method::Situate | Method::Uniform => {
            let config = EngineConfig {
                uniform_mode: a.method == Method::Uniform || config.uniform_mode,
                ..config
            };
            let runs = a
                .seeds
                .resolve(&default_seeds())
                .into_iter()
                .map(|seed| {
                    let scored = score_situate(&l.test, &l.priors, &l.model, l.provider.as_ref(), &config, seed)?;
                    Ok(RecallTable::from_scores(&scored, &DEFAULT_N_GRID, Ordering::Descending)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            aggregate_runs(&runs)?
        }
        Method::Topbox => {
            let scored = score_topbox(&l.test, &l.priors, &l.model.categories, config.pad);
            RecallTable::from_scores(&scored, &DEFAULT_N_GRID, Ordering::Descending)?
        }
        Method::Irsg => {
            let path = a
                .train_annotations
                .as_ref()
                .ok_or_else(|| CliError::Validation("irsg needs --train-annotations".into()))?;
            let gmms = fit_gmms(path, &l.model, config.seed)?;
            let scored = score_irsg(&l.test, &l.priors, &gmms, a.top_k_irsg);
            RecallTable::from_scores(&scored, &DEFAULT_N_GRID, Ordering::AscendingEnergy)?
        }
    };
    if let Some(p) = &a.out {
        write_text(p, &to_json(&table))?;
    }
    let mut header = String::new();
    let mut row = String::new();
    for (i, n) in table.ns.iter().enumerate() {
        let cell = if table.runs > 1 {
            format!("{:.3} ({:.3})", table.mean[i], table.std[i])
        } else {
            format!("{:.3}", table.mean[i])
        };
        let w = cell.len().max(6);
        header.push_str(&format!("  {:>w$}", format!("R@{n}")));
        row.push_str(&format!("  {cell:>w$}"));
    }
    writeln!(stdout, "{}", header.trim_start())?;
    writeln!(stdout, "{}", row.trim_start())?;
    Ok(())
}

fn cmd_compare(a: &CompareArgs, stdout: &mut Vec<u8>) -> Result<(), CliError> {
    let l = load_test_inputs(&a.inputs)?;
    let config = a.engine.resolve(None)?;
    let gmms = fit_gmms(&a.train_annotations, &l.model, config.seed)?;
    let seeds = a.seeds.resolve(&default_seeds());
    let report = compare_methods(&CompareInputs {
        test: &l.test,
        priors: &l.priors,
        model: &l.model,
        provider: l.provider.as_ref(),
        config: &config,
        gmms: &gmms,
        seeds: &seeds,
        ns: &DEFAULT_N_GRID,
        irsg_top_k: a.top_k_irsg,
    })?;
    if let Some(p) = &a.out {
        write_text(p, &to_json(&report))?;
    }
    write!(stdout, "{}", report.to_text())?;
    Ok(())
}

/// Reads a manifest written by `synth`.
pub fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    parse_json(path)
}
