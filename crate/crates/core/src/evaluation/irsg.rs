use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, ScoredImage};
use crate::data_io::{AnnotationRecord, PriorProposal};
use crate::geometry::{to_params, BoxParams, ImageDims};
use crate::prob_models::{fit_gmm, GmmModel, DEFAULT_RIDGE};

pub const DEFAULT_IRSG_TOP_K: usize = 20;
const UNARY_EPS: f64 = 1e-6;
const PAIR_EPS: f64 = 1e-12;

/// Relative placement of box `b` with respect to box `a`:
/// `(Δcx, Δcy, ln area ratio, ln aspect ratio)`.
pub fn pair_features(a: &BoxParams, b: &BoxParams) -> [f64; 4] {
    [
        b.cx - a.cx,
        b.cy - a.cy,
        (b.area_ratio / a.area_ratio).ln(),
        (b.aspect_ratio / a.aspect_ratio).ln(),
    ]
}

/// One mixture per unordered category pair `(i, j)`, `i < j`, over
/// `pair_features(box_i, box_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseGmms {
    pub categories: Vec<String>,
    pub pairs: Vec<((usize, usize), GmmModel)>,
}

pub fn fit_pairwise_gmms<R: Rng + ?Sized>(
    annotations: &[AnnotationRecord],
    categories: &[String],
    k: usize,
    rng: &mut R,
) -> Result<PairwiseGmms, EvalError> {
    let positives: Vec<&AnnotationRecord> = annotations.iter().filter(|r| r.is_positive).collect();
    if positives.len() < k * 5 {
        return Err(EvalError::InsufficientData(format!(
            "{} positive images for {k} components, need {}",
            positives.len(),
            k * 5
        )));
    }
    let mut params = Vec::with_capacity(positives.len());
    for r in &positives {
        let row: Vec<BoxParams> = categories
            .iter()
            .map(|c| {
                let b = r.box_for(c).ok_or_else(|| {
                    EvalError::InsufficientData(format!("image {:?} lacks a {c:?} box", r.image_id))
                })?;
                to_params(b, r.dims).map_err(|e| EvalError::InsufficientData(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        params.push(row);
    }
    let mut pairs = Vec::new();
    for i in 0..categories.len() {
        for j in i + 1..categories.len() {
            let samples: Vec<[f64; 4]> = params.iter().map(|row| pair_features(&row[i], &row[j])).collect();
            pairs.push(((i, j), fit_gmm(&samples, k, DEFAULT_RIDGE, rng)?.model));
        }
    }
    Ok(PairwiseGmms {
        categories: categories.to_vec(),
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrsgCandidate {
    pub params: BoxParams,
    pub confidence: f64,
}

/// Per category, the `top_k` highest-confidence priors (file order on ties).
pub fn irsg_candidates(
    priors: &[PriorProposal],
    dims: ImageDims,
    categories: &[String],
    top_k: usize,
) -> Vec<Vec<IrsgCandidate>> {
    categories
        .iter()
        .map(|c| {
            let mut mine: Vec<&PriorProposal> = priors.iter().filter(|p| &p.category == c).collect();
            mine.sort_by(|a, b| b.detector_confidence.total_cmp(&a.detector_confidence));
            mine.into_iter()
                .filter_map(|p| {
                    to_params(&p.bbox.clip(dims), dims).ok().map(|params| IrsgCandidate {
                        params,
                        confidence: p.detector_confidence,
                    })
                })
                .take(top_k)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrsgResult {
    /// Chosen candidate index per category; empty when some category has none.
    pub config: Vec<usize>,
    pub energy: f64,
}

/// Exhaustive minimization of
/// `-Σ ln(conf + 1e-6) - Σ_pairs ln(gmm density + 1e-12)` over one candidate
/// per category. The first minimizer in lexicographic order wins ties; a
/// category without candidates gives infinite energy.
pub fn irsg_energy(candidates: &[Vec<IrsgCandidate>], gmms: &PairwiseGmms) -> IrsgResult {
    if candidates.is_empty() || candidates.iter().any(Vec::is_empty) {
        return IrsgResult {
            config: Vec::new(),
            energy: f64::INFINITY,
        };
    }
    let unary: Vec<Vec<f64>> = candidates
        .iter()
        .map(|cs| cs.iter().map(|c| -(c.confidence + UNARY_EPS).ln()).collect())
        .collect();
    let tables: Vec<((usize, usize), Vec<Vec<f64>>)> = gmms
        .pairs
        .iter()
        .map(|&((i, j), ref gmm)| {
            let table = candidates[i]
                .iter()
                .map(|a| {
                    candidates[j]
                        .iter()
                        .map(|b| {
                            let d = gmm.density(&pair_features(&a.params, &b.params)).unwrap_or(0.0);
                            -(d + PAIR_EPS).ln()
                        })
                        .collect()
                })
                .collect();
            ((i, j), table)
        })
        .collect();

    let k = candidates.len();
    let mut idx = vec![0usize; k];
    let mut best = IrsgResult {
        config: idx.clone(),
        energy: f64::INFINITY,
    };
    loop {
        let mut e: f64 = idx.iter().enumerate().map(|(c, &i)| unary[c][i]).sum();
        for ((i, j), t) in &tables {
            e += t[idx[*i]][idx[*j]];
        }
        if e < best.energy {
            best.energy = e;
            best.config.clone_from(&idx);
        }
        // mixed-radix increment, last category fastest
        let mut c = k;
        loop {
            if c == 0 {
                return best;
            }
            c -= 1;
            idx[c] += 1;
            if idx[c] < candidates[c].len() {
                break;
            }
            idx[c] = 0;
        }
    }
}

/// IRSG energies for every test image; lower is a better match.
pub fn score_irsg(
    test: &[AnnotationRecord],
    priors: &BTreeMap<String, Vec<PriorProposal>>,
    gmms: &PairwiseGmms,
    top_k: usize,
) -> Vec<ScoredImage> {
    use rayon::prelude::*;
    test.par_iter()
        .map(|r| {
            let mine = priors.get(&r.image_id).map(Vec::as_slice).unwrap_or(&[]);
            let cands = irsg_candidates(mine, r.dims, &gmms.categories, top_k);
            ScoredImage {
                image_id: r.image_id.clone(),
                score: irsg_energy(&cands, gmms).energy,
                is_positive: r.is_positive,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::prob_models::GaussianModel;

    fn unit_gmm(mean: [f64; 4]) -> GmmModel {
        let g = GaussianModel::new(DVector::from_row_slice(&mean), DMatrix::identity(4, 4) * 0.01).unwrap();
        GmmModel::new(vec![1.0], vec![g]).unwrap()
    }

    fn cand(cx: f64, conf: f64) -> IrsgCandidate {
        IrsgCandidate {
            params: BoxParams {
                cx,
                cy: 0.5,
                area_ratio: 0.1,
                aspect_ratio: 1.0,
            },
            confidence: conf,
        }
    }

    fn toy() -> (Vec<Vec<IrsgCandidate>>, PairwiseGmms) {
        let cands = vec![
            vec![cand(0.2, 0.9), cand(0.5, 0.6)],
            vec![cand(0.4, 0.3), cand(0.7, 0.8)],
            vec![cand(0.6, 0.5), cand(0.1, 0.95)],
        ];
        let gmms = PairwiseGmms {
            categories: vec!["a".into(), "b".into(), "c".into()],
            pairs: vec![
                ((0, 1), unit_gmm([0.2, 0.0, 0.0, 0.0])),
                ((0, 2), unit_gmm([0.4, 0.0, 0.0, 0.0])),
                ((1, 2), unit_gmm([0.2, 0.0, 0.0, 0.0])),
            ],
        };
        (cands, gmms)
    }

    #[test]
    fn matches_hand_enumeration() {
        let (cands, gmms) = toy();
        let energy = |cfg: [usize; 3]| {
            let mut e = 0.0;
            for c in 0..3 {
                e -= (cands[c][cfg[c]].confidence + 1e-6).ln();
            }
            for ((i, j), g) in &gmms.pairs {
                let f = pair_features(&cands[*i][cfg[*i]].params, &cands[*j][cfg[*j]].params);
                e -= (g.density(&f).unwrap() + 1e-12).ln();
            }
            e
        };
        let mut all = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    all.push(([a, b, c], energy([a, b, c])));
                }
            }
        }
        assert_eq!(all.len(), 8);
        let best = all.iter().min_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
        let r = irsg_energy(&cands, &gmms);
        assert_eq!(r.config, best.0.to_vec());
        assert!((r.energy - best.1).abs() < 1e-9);
        // the spatially consistent chain 0.2 -> 0.4 -> 0.6 wins despite weaker confidences
        assert_eq!(r.config, vec![0, 0, 0]);
    }

    #[test]
    fn single_candidates_and_missing_category() {
        let (mut cands, gmms) = toy();
        for c in &mut cands {
            c.truncate(1);
        }
        let r = irsg_energy(&cands, &gmms);
        assert_eq!(r.config, vec![0, 0, 0]);
        cands[1].clear();
        assert_eq!(irsg_energy(&cands, &gmms).energy, f64::INFINITY);
    }

    #[test]
    fn raising_a_chosen_unary_lowers_energy() {
        let (mut cands, gmms) = toy();
        let before = irsg_energy(&cands, &gmms);
        let c0 = before.config[0];
        cands[0][c0].confidence = 0.99;
        assert!(irsg_energy(&cands, &gmms).energy < before.energy);
    }

    #[test]
    fn pair_feature_definition() {
        let a = BoxParams {
            cx: 0.2,
            cy: 0.3,
            area_ratio: 0.1,
            aspect_ratio: 2.0,
        };
        let b = BoxParams {
            cx: 0.5,
            cy: 0.1,
            area_ratio: 0.2,
            aspect_ratio: 0.5,
        };
        let f = pair_features(&a, &b);
        assert!((f[0] - 0.3).abs() < 1e-15);
        assert!((f[1] + 0.2).abs() < 1e-15);
        assert!((f[2] - 2f64.ln()).abs() < 1e-15);
        assert!((f[3] + 4f64.ln()).abs() < 1e-15);
    }
}
