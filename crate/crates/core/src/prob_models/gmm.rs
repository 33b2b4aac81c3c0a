use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::gaussian::{regularize, weighted_moments, GaussianModel};
use super::ModelError;

pub const DEFAULT_COMPONENTS: usize = 3;
pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITERATIONS: usize = 200;

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub(crate) weights: Vec<f64>,
    pub(crate) components: Vec<GaussianModel>,
}

/// Result of an EM fit together with its per-iteration log-likelihood history.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihoods: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianModel>) -> Result<Self, ModelError> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(ModelError::Empty);
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(ModelError::BadWeights);
        }
        let dim = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != dim) {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                found: c.dim(),
            });
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianModel] {
        &self.components
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, ModelError> {
        let logs = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| Ok(w.ln() + c.log_density(x)?))
            .collect::<Result<Vec<f64>, ModelError>>()?;
        Ok(log_sum_exp(&logs))
    }

    /// `sum_j w_j N(x; mu_j, Sigma_j)`.
    pub fn density(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(self.log_density(x)?.exp())
    }

    pub fn log_likelihood<V: AsRef<[f64]>>(&self, samples: &[V]) -> Result<f64, ModelError> {
        samples.iter().map(|s| self.log_density(s.as_ref())).sum()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding: first center uniform, then proportional to squared distance.
fn seed_centers<V: AsRef<[f64]>, R: Rng + ?Sized>(samples: &[V], k: usize, rng: &mut R) -> Vec<usize> {
    let n = samples.len();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|s| sq_dist(s.as_ref(), samples[centers[0]].as_ref()))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        centers.push(next);
        for (i, s) in samples.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(s.as_ref(), samples[next].as_ref()));
        }
    }
    centers
}

/// EM for a `k`-component full-covariance mixture. Initial responsibilities
/// are hard assignments to k-means++ seeds; covariances are regularized the
/// same way as [`super::fit_gaussian`].
pub fn fit_gmm<V: AsRef<[f64]>, R: Rng + ?Sized>(
    samples: &[V],
    k: usize,
    ridge: f64,
    rng: &mut R,
) -> Result<GmmFit, ModelError> {
    if k == 0 || samples.is_empty() {
        return Err(ModelError::Empty);
    }
    let dim = samples[0].as_ref().len();
    let needed = k * (dim + 1);
    if samples.len() < needed {
        return Err(ModelError::TooFewSamples {
            needed,
            found: samples.len(),
        });
    }
    let n = samples.len();

    let centers = seed_centers(samples, k, rng);
    let mut resp = DMatrix::<f64>::zeros(n, k);
    for (i, s) in samples.iter().enumerate() {
        let nearest = (0..k)
            .min_by(|&a, &b| {
                sq_dist(s.as_ref(), samples[centers[a]].as_ref())
                    .total_cmp(&sq_dist(s.as_ref(), samples[centers[b]].as_ref()))
            })
            .unwrap();
        resp[(i, nearest)] = 1.0;
    }

    let mut model = m_step(samples, &resp, ridge, dim)?;
    let mut history = vec![model.log_likelihood(samples)?];
    for _ in 0..EM_MAX_ITERATIONS {
        e_step(&model, samples, &mut resp)?;
        model = m_step(samples, &resp, ridge, dim)?;
        let ll = model.log_likelihood(samples)?;
        let prev = *history.last().unwrap();
        history.push(ll);
        if ll - prev < EM_TOLERANCE {
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihoods: history,
    })
}

fn e_step<V: AsRef<[f64]>>(model: &GmmModel, samples: &[V], resp: &mut DMatrix<f64>) -> Result<(), ModelError> {
    let k = model.k();
    let mut logs = vec![0.0; k];
    for (i, s) in samples.iter().enumerate() {
        for (j, (c, w)) in model.components.iter().zip(&model.weights).enumerate() {
            logs[j] = w.ln() + c.log_density(s.as_ref())?;
        }
        let norm = log_sum_exp(&logs);
        for j in 0..k {
            resp[(i, j)] = (logs[j] - norm).exp();
        }
    }
    Ok(())
}

fn m_step<V: AsRef<[f64]>>(
    samples: &[V],
    resp: &DMatrix<f64>,
    ridge: f64,
    dim: usize,
) -> Result<GmmModel, ModelError> {
    let n = samples.len() as f64;
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = resp.column(j).iter().copied().collect();
        let nk: f64 = col.iter().sum();
        if nk <= 1e-12 {
            // dead component: park it on the global moments with negligible weight
            let uniform = vec![1.0; samples.len()];
            let (mean, cov) = weighted_moments(samples, &uniform, dim)?;
            weights.push(1e-12);
            components.push(GaussianModel::new(mean, regularize(cov, ridge))?);
            continue;
        }
        let (mean, cov): (DVector<f64>, DMatrix<f64>) = weighted_moments(samples, &col, dim)?;
        weights.push(nk / n);
        components.push(GaussianModel::new(mean, regularize(cov, ridge))?);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GmmModel::new(weights, components)
}
