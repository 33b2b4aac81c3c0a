//! Ranking metrics and the comparison methods: the agent loop, its uniform
//! lesion, top-box detector scoring and an IRSG-style energy ranking.

mod compare;
mod irsg;

pub use compare::{
    compare_methods, score_situate, score_topbox, CompareInputs, ComparisonReport, MethodRow, UNIFORM_NAME,
    SITUATE_NAME, TOPBOX_NAME, IRSG_NAME,
};
pub use irsg::{
    fit_pairwise_gmms, irsg_candidates, irsg_energy, pair_features, score_irsg, IrsgCandidate, IrsgResult,
    PairwiseGmms, DEFAULT_IRSG_TOP_K,
};

use serde::{Deserialize, Serialize};

use crate::data_io::PriorProposal;
use crate::engine::{match_score_from_totals, EngineError};
use crate::prob_models::ModelError;

/// N values reported in recall tables.
pub const DEFAULT_N_GRID: [usize; 6] = [1, 2, 5, 10, 20, 100];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("N must be at least 1")]
    BadN,
    #[error("no positive scores to rank")]
    NoPositives,
    #[error("score for {0:?} is NaN")]
    NanScore(String),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("recall tables use different N grids")]
    GridMismatch,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Higher scores rank first.
    Descending,
    /// Lower energies rank first.
    AscendingEnergy,
}

impl Ordering {
    /// `a` ranks at or above `b`.
    fn beats_or_ties(self, a: f64, b: f64) -> bool {
        match self {
            Ordering::Descending => a >= b,
            Ordering::AscendingEnergy => a <= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f64,
    pub is_positive: bool,
}

/// Fraction of positives that rank in the top `n` when inserted alone among
/// all negatives. A negative that ties a positive ranks above it.
pub fn recall_at_n(pos: &[f64], neg: &[f64], n: usize, ordering: Ordering) -> Result<f64, EvalError> {
    if n < 1 {
        return Err(EvalError::BadN);
    }
    Ok(recall_grid(pos, neg, &[n], ordering)?[0])
}

/// [`recall_at_n`] for several N at once.
pub fn recall_grid(pos: &[f64], neg: &[f64], ns: &[usize], ordering: Ordering) -> Result<Vec<f64>, EvalError> {
    if pos.is_empty() {
        return Err(EvalError::NoPositives);
    }
    if ns.contains(&0) {
        return Err(EvalError::BadN);
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(EvalError::NanScore(String::new()));
    }
    let ranks: Vec<usize> = pos
        .iter()
        .map(|&p| 1 + neg.iter().filter(|&&q| ordering.beats_or_ties(q, p)).count())
        .collect();
    Ok(ns
        .iter()
        .map(|&n| ranks.iter().filter(|&&r| r <= n).count() as f64 / pos.len() as f64)
        .collect())
}

/// Mean and spread of R@N over one or more runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub ns: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub runs: usize,
}

impl RecallTable {
    /// A single run's recalls for the scored corpus.
    pub fn from_scores(images: &[ScoredImage], ns: &[usize], ordering: Ordering) -> Result<Self, EvalError> {
        if let Some(bad) = images.iter().find(|i| i.score.is_nan()) {
            return Err(EvalError::NanScore(bad.image_id.clone()));
        }
        let (pos, neg): (Vec<&ScoredImage>, Vec<&ScoredImage>) = images.iter().partition(|i| i.is_positive);
        let pos: Vec<f64> = pos.iter().map(|i| i.score).collect();
        let neg: Vec<f64> = neg.iter().map(|i| i.score).collect();
        Ok(Self {
            ns: ns.to_vec(),
            mean: recall_grid(&pos, &neg, ns, ordering)?,
            std: vec![0.0; ns.len()],
            runs: 1,
        })
    }

    pub fn at(&self, n: usize) -> Option<(f64, f64)> {
        let i = self.ns.iter().position(|&x| x == n)?;
        Some((self.mean[i], self.std[i]))
    }
}

/// Per-N mean and population standard deviation of single-run tables.
pub fn aggregate_runs(runs: &[RecallTable]) -> Result<RecallTable, EvalError> {
    let first = runs.first().ok_or(EvalError::NoRuns)?;
    if runs.iter().any(|r| r.ns != first.ns) {
        return Err(EvalError::GridMismatch);
    }
    let count = runs.len() as f64;
    let mut mean = Vec::with_capacity(first.ns.len());
    let mut std = Vec::with_capacity(first.ns.len());
    for i in 0..first.ns.len() {
        // shifted by the first run so identical runs give exactly zero spread
        let base = first.mean[i];
        let m = base + runs.iter().map(|r| r.mean[i] - base).sum::<f64>() / count;
        let var = runs.iter().map(|r| (r.mean[i] - m).powi(2)).sum::<f64>() / count;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(RecallTable {
        ns: first.ns.clone(),
        mean,
        std,
        runs: runs.len(),
    })
}

/// Padded geometric mean of each category's best detector confidence; `pad`
/// when a category has no prior box.
pub fn topbox_score(priors: &[PriorProposal], categories: &[String], pad: f64) -> f64 {
    let best: Vec<Option<f64>> = categories
        .iter()
        .map(|c| {
            priors
                .iter()
                .filter(|p| &p.category == c)
                .map(|p| p.detector_confidence)
                .max_by(f64::total_cmp)
        })
        .collect();
    match_score_from_totals(&best, pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PixelBox;

    #[test]
    fn hand_counted_rank() {
        let neg = [0.9, 0.5, 0.2];
        assert_eq!(recall_at_n(&[0.6], &neg, 1, Ordering::Descending).unwrap(), 0.0);
        assert_eq!(recall_at_n(&[0.6], &neg, 2, Ordering::Descending).unwrap(), 1.0);
        assert_eq!(recall_at_n(&[0.95, 0.99], &neg, 1, Ordering::Descending).unwrap(), 1.0);
        assert!(recall_at_n(&[0.6], &neg, 0, Ordering::Descending).is_err());
    }

    #[test]
    fn ties_count_against_positive() {
        assert_eq!(recall_at_n(&[0.5], &[0.5], 1, Ordering::Descending).unwrap(), 0.0);
        assert_eq!(recall_at_n(&[1.0], &[1.0], 1, Ordering::AscendingEnergy).unwrap(), 0.0);
    }

    #[test]
    fn minimum_positive_needs_full_depth() {
        let neg: Vec<f64> = (0..400).map(|i| 1.0 + i as f64).collect();
        let r = recall_grid(&[0.0], &neg, &DEFAULT_N_GRID, Ordering::Descending).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
        assert_eq!(recall_at_n(&[0.0], &neg, 401, Ordering::Descending).unwrap(), 1.0);
        assert_eq!(recall_at_n(&[0.0], &neg, 400, Ordering::Descending).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        let t = |v: f64| RecallTable {
            ns: vec![10],
            mean: vec![v],
            std: vec![0.0],
            runs: 1,
        };
        let a = aggregate_runs(&[t(0.3), t(0.5)]).unwrap();
        assert!((a.mean[0] - 0.4).abs() < 1e-12);
        assert!((a.std[0] - 0.1).abs() < 1e-12);
        let same = aggregate_runs(&[t(0.7), t(0.7), t(0.7)]).unwrap();
        assert_eq!(same.std[0], 0.0);
        assert!(aggregate_runs(&[]).is_err());
        let mut other = t(0.1);
        other.ns = vec![5];
        assert_eq!(aggregate_runs(&[t(0.1), other]), Err(EvalError::GridMismatch));
    }

    fn prior(category: &str, c: f64) -> PriorProposal {
        PriorProposal {
            image_id: "img".into(),
            category: category.into(),
            bbox: PixelBox::new(0.0, 0.0, 10.0, 10.0),
            detector_confidence: c,
        }
    }

    #[test]
    fn topbox_examples() {
        let cats: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let p = [prior("a", 0.99), prior("b", 0.99), prior("c", 0.99)];
        assert!((topbox_score(&p, &cats, 0.01) - 1.0).abs() < 1e-12);
        let p = [prior("a", 0.49), prior("a", 0.1), prior("b", 0.99), prior("c", 0.24)];
        assert!((topbox_score(&p, &cats, 0.01) - 0.5).abs() < 1e-12);
        assert_eq!(topbox_score(&p[..3], &cats, 0.01), 0.01);
    }
}
