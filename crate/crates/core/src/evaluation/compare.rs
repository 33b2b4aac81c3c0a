use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_runs, score_irsg, topbox_score, EvalError, Ordering, PairwiseGmms, RecallTable, ScoredImage};
use crate::data_io::{AnnotationRecord, PriorProposal};
use crate::engine::{run_image_seeded, EngineConfig, EngineError, ImageInput, TrainedSituationModel};
use crate::features::FeatureProvider;

pub const SITUATE_NAME: &str = "Situate";
pub const UNIFORM_NAME: &str = "Uniform";
pub const TOPBOX_NAME: &str = "Top box";
pub const IRSG_NAME: &str = "IRSG-lite";

fn priors_for<'a>(priors: &'a BTreeMap<String, Vec<PriorProposal>>, id: &str) -> &'a [PriorProposal] {
    priors.get(id).map(Vec::as_slice).unwrap_or(&[])
}

/// Match scores for every test image under one seed, in input order.
pub fn score_situate(
    test: &[AnnotationRecord],
    priors: &BTreeMap<String, Vec<PriorProposal>>,
    model: &TrainedSituationModel,
    provider: &dyn FeatureProvider,
    config: &EngineConfig,
    seed: u64,
) -> Result<Vec<ScoredImage>, EngineError> {
    test.par_iter()
        .map(|r| {
            let input = ImageInput {
                image_id: &r.image_id,
                dims: r.dims,
                priors: priors_for(priors, &r.image_id),
            };
            let result = run_image_seeded(input, model, provider, config, seed)?;
            Ok(ScoredImage {
                image_id: r.image_id.clone(),
                score: result.score,
                is_positive: r.is_positive,
            })
        })
        .collect()
}

pub fn score_topbox(
    test: &[AnnotationRecord],
    priors: &BTreeMap<String, Vec<PriorProposal>>,
    categories: &[String],
    pad: f64,
) -> Vec<ScoredImage> {
    test.iter()
        .map(|r| ScoredImage {
            image_id: r.image_id.clone(),
            score: topbox_score(priors_for(priors, &r.image_id), categories, pad),
            is_positive: r.is_positive,
        })
        .collect()
}

pub struct CompareInputs<'a> {
    pub test: &'a [AnnotationRecord],
    pub priors: &'a BTreeMap<String, Vec<PriorProposal>>,
    pub model: &'a TrainedSituationModel,
    pub provider: &'a dyn FeatureProvider,
    /// Situate settings; the uniform row uses the same with `uniform_mode` set.
    pub config: &'a EngineConfig,
    pub gmms: &'a PairwiseGmms,
    pub seeds: &'a [u64],
    pub ns: &'a [usize],
    pub irsg_top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub name: String,
    pub stochastic: bool,
    pub table: RecallTable,
    pub per_run: Vec<RecallTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodRow>,
}

impl ComparisonReport {
    pub fn method(&self, name: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Aligned table, one row per method; stochastic rows show the std in parentheses.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .methods
            .iter()
            .map(|m| {
                m.table
                    .mean
                    .iter()
                    .zip(&m.table.std)
                    .map(|(mean, std)| {
                        if m.stochastic {
                            format!("{mean:.3} ({std:.3})")
                        } else {
                            format!("{mean:.3}")
                        }
                    })
                    .collect()
            })
            .collect();
        let name_w = self.methods.iter().map(|m| m.name.len()).max().unwrap_or(0).max(6);
        let col_w = cells.iter().flatten().map(String::len).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "Method");
        for n in &self.ns {
            let _ = write!(out, "  {:>col_w$}", format!("R@{n}"));
        }
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&cells) {
            let _ = write!(out, "{:<name_w$}", m.name);
            for c in row {
                let _ = write!(out, "  {c:>col_w$}");
            }
            out.push('\n');
        }
        out
    }
}

fn stochastic_row(
    name: &str,
    inputs: &CompareInputs<'_>,
    config: &EngineConfig,
) -> Result<MethodRow, EvalError> {
    let per_run = inputs
        .seeds
        .iter()
        .map(|&seed| {
            let scored = score_situate(inputs.test, inputs.priors, inputs.model, inputs.provider, config, seed)?;
            RecallTable::from_scores(&scored, inputs.ns, Ordering::Descending)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(MethodRow {
        name: name.into(),
        stochastic: true,
        table: aggregate_runs(&per_run)?,
        per_run,
    })
}

fn deterministic_row(name: &str, scored: &[ScoredImage], ns: &[usize], ordering: Ordering) -> Result<MethodRow, EvalError> {
    let table = RecallTable::from_scores(scored, ns, ordering)?;
    Ok(MethodRow {
        name: name.into(),
        stochastic: false,
        per_run: vec![table.clone()],
        table,
    })
}

/// Situate and its uniform lesion over every seed, top-box and IRSG-lite once.
pub fn compare_methods(inputs: &CompareInputs<'_>) -> Result<ComparisonReport, EvalError> {
    if inputs.seeds.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let situate = EngineConfig {
        uniform_mode: false,
        ..inputs.config.clone()
    };
    let uniform = EngineConfig {
        uniform_mode: true,
        ..inputs.config.clone()
    };
    let topbox = score_topbox(inputs.test, inputs.priors, &inputs.model.categories, inputs.config.pad);
    let irsg = score_irsg(inputs.test, inputs.priors, inputs.gmms, inputs.irsg_top_k);
    Ok(ComparisonReport {
        ns: inputs.ns.to_vec(),
        seeds: inputs.seeds.to_vec(),
        methods: vec![
            stochastic_row(SITUATE_NAME, inputs, &situate)?,
            stochastic_row(UNIFORM_NAME, inputs, &uniform)?,
            deterministic_row(TOPBOX_NAME, &topbox, inputs.ns, Ordering::Descending)?,
            deterministic_row(IRSG_NAME, &irsg, inputs.ns, Ordering::AscendingEnergy)?,
        ],
    })
}
