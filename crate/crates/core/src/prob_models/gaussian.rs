use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Floor on the ridge added to a fitted covariance when the sample spread is zero.
pub const ABSOLUTE_COV_FLOOR: f64 = 1e-8;
/// Default relative ridge applied to fitted covariances.
pub const DEFAULT_RIDGE: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One category's block of four consecutive dimensions
/// (cx, cy, area_ratio, aspect_ratio).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutBlock {
    pub category: String,
    pub start: usize,
}

pub const BLOCK_LEN: usize = 4;

/// Multivariate Gaussian, optionally labelled with per-category blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    layout: Vec<LayoutBlock>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, ModelError> {
        let dim = mean.len();
        if dim == 0 {
            return Err(ModelError::Empty);
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                found: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let cov = symmetrize(cov);
        Ok(Self {
            mean,
            cov,
            layout: Vec::new(),
        })
    }

    /// Attaches category blocks; the blocks must tile `[0, dim)` in order.
    pub fn with_layout<S: AsRef<str>>(mut self, categories: &[S]) -> Result<Self, ModelError> {
        if categories.len() * BLOCK_LEN != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: categories.len() * BLOCK_LEN,
            });
        }
        self.layout = categories
            .iter()
            .enumerate()
            .map(|(i, c)| LayoutBlock {
                category: c.as_ref().to_string(),
                start: i * BLOCK_LEN,
            })
            .collect();
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn layout(&self) -> &[LayoutBlock] {
        &self.layout
    }

    pub fn block(&self, category: &str) -> Option<&LayoutBlock> {
        self.layout.iter().find(|b| b.category == category)
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>, ModelError> {
        Cholesky::new(self.cov.clone()).ok_or(ModelError::NotPositiveDefinite)
    }

    /// Sub-model for one category's four dimensions.
    pub fn marginal(&self, category: &str) -> Result<GaussianModel, ModelError> {
        let block = self
            .block(category)
            .ok_or_else(|| ModelError::UnknownCategory(category.to_string()))?;
        let s = block.start;
        Ok(GaussianModel {
            mean: self.mean.rows(s, BLOCK_LEN).into_owned(),
            cov: self.cov.view((s, s), (BLOCK_LEN, BLOCK_LEN)).into_owned(),
            layout: vec![LayoutBlock {
                category: category.to_string(),
                start: 0,
            }],
        })
    }

    /// Conditional distribution of the unobserved dimensions given `observed`
    /// (dimension index to value). Category blocks that stay fully unobserved
    /// are carried over to the new layout with remapped offsets.
    pub fn condition(&self, observed: &BTreeMap<usize, f64>) -> Result<GaussianModel, ModelError> {
        if observed.is_empty() {
            return Ok(self.clone());
        }
        let dim = self.dim();
        if let Some((&bad, _)) = observed.iter().find(|(&i, _)| i >= dim) {
            return Err(ModelError::IndexOutOfRange { index: bad, dim });
        }
        if observed.len() >= dim {
            return Err(ModelError::NothingLeft);
        }
        if observed.values().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let obs_idx: Vec<usize> = observed.keys().copied().collect();
        let free_idx: Vec<usize> = (0..dim).filter(|i| !observed.contains_key(i)).collect();

        let s_bb = self.cov.select_rows(&obs_idx).select_columns(&obs_idx);
        let s_ab = self.cov.select_rows(&free_idx).select_columns(&obs_idx);
        let s_aa = self.cov.select_rows(&free_idx).select_columns(&free_idx);
        let resid = DVector::from_iterator(
            obs_idx.len(),
            observed.iter().map(|(&i, &v)| v - self.mean[i]),
        );

        let chol = Cholesky::new(s_bb).ok_or(ModelError::SingularConditioning)?;
        let mean_a = self.mean.select_rows(&free_idx) + &s_ab * chol.solve(&resid);
        let cov_a = s_aa - &s_ab * chol.solve(&s_ab.transpose());

        let mut layout = Vec::new();
        for block in &self.layout {
            let range = block.start..block.start + BLOCK_LEN;
            if range.clone().all(|i| !observed.contains_key(&i)) {
                let start = free_idx.iter().position(|&i| i == block.start).unwrap();
                layout.push(LayoutBlock {
                    category: block.category.clone(),
                    start,
                });
            }
        }
        Ok(GaussianModel {
            mean: mean_a,
            cov: symmetrize(cov_a),
            layout,
        })
    }

    /// Draws `mean + L z` with `L` the lower Cholesky factor.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, ModelError> {
        let chol = self.cholesky()?;
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        Ok(&self.mean + chol.l() * z)
    }

    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64, ModelError> {
        let chol = self.cholesky()?;
        self.mahalanobis_with(&chol, x)
    }

    fn mahalanobis_with(&self, chol: &Cholesky<f64, Dyn>, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let diff = DVector::from_column_slice(x) - &self.mean;
        // ||L^-1 (x - mu)||^2
        let y = chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .ok_or(ModelError::NotPositiveDefinite)?;
        Ok(y.norm_squared())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, ModelError> {
        let chol = self.cholesky()?;
        let m2 = self.mahalanobis_with(&chol, x)?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Ok(-0.5 * (m2 + self.dim() as f64 * LN_2PI + log_det))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(self.log_density(x)?.exp())
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Ridge actually added to a covariance whose unregularized trace is `trace`.
pub fn effective_ridge(ridge: f64, trace: f64, dim: usize) -> f64 {
    (ridge * trace / dim as f64).max(ABSOLUTE_COV_FLOOR)
}

/// Maximum-likelihood Gaussian (population covariance) plus
/// `max(ridge * trace / dim, 1e-8) * I`.
pub fn fit_gaussian<V: AsRef<[f64]>>(samples: &[V], ridge: f64) -> Result<GaussianModel, ModelError> {
    if samples.len() < 2 {
        return Err(ModelError::TooFewSamples {
            needed: 2,
            found: samples.len(),
        });
    }
    let dim = samples[0].as_ref().len();
    if dim == 0 {
        return Err(ModelError::Empty);
    }
    let weights = vec![1.0; samples.len()];
    let (mean, cov) = weighted_moments(samples, &weights, dim)?;
    let cov = regularize(cov, ridge);
    GaussianModel::new(mean, cov)
}

pub(crate) fn regularize(mut cov: DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let dim = cov.nrows();
    let eps = effective_ridge(ridge, cov.trace(), dim);
    for i in 0..dim {
        cov[(i, i)] += eps;
    }
    cov
}

/// Weighted mean and (divide-by-total-weight) covariance.
pub(crate) fn weighted_moments<V: AsRef<[f64]>>(
    samples: &[V],
    weights: &[f64],
    dim: usize,
) -> Result<(DVector<f64>, DMatrix<f64>), ModelError> {
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::zeros(dim);
    for (s, &w) in samples.iter().zip(weights) {
        let s = s.as_ref();
        if s.len() != dim {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                found: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        for (m, v) in mean.iter_mut().zip(s) {
            *m += w * v;
        }
    }
    mean /= total;
    let mut cov = DMatrix::zeros(dim, dim);
    let mut d = DVector::zeros(dim);
    for (s, &w) in samples.iter().zip(weights) {
        for (k, v) in s.as_ref().iter().enumerate() {
            d[k] = v - mean[k];
        }
        cov.syger(w, &d, &d, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= total;
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bivariate(rho: f64) -> GaussianModel {
        GaussianModel::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn fit_two_points_population_variance() {
        let m = fit_gaussian(&[[1.0], [3.0]], 0.0).unwrap();
        assert_eq!(m.mean()[0], 2.0);
        // ridge 0 still gets the absolute floor
        assert!((m.cov()[(0, 0)] - 1.0 - ABSOLUTE_COV_FLOOR).abs() < 1e-15);
    }

    #[test]
    fn fit_constant_samples_uses_floor() {
        let v = [0.3, -1.0, 2.0];
        let m = fit_gaussian(&[v, v, v], DEFAULT_RIDGE).unwrap();
        assert_eq!(m.mean().as_slice(), &v);
        assert_eq!(m.cov(), &(DMatrix::identity(3, 3) * ABSOLUTE_COV_FLOOR));
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_gaussian(&[[1.0]], 0.0),
            Err(ModelError::TooFewSamples { .. })
        ));
        let samples: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(
            fit_gaussian(&samples, 0.0),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bivariate_conditioning() {
        let m = bivariate(0.8);
        let c = m.condition(&BTreeMap::from([(1, 1.0)])).unwrap();
        assert!((c.mean()[0] - 0.8).abs() < 1e-12);
        assert!((c.cov()[(0, 0)] - 0.36).abs() < 1e-12);
    }

    #[test]
    fn condition_empty_is_identity() {
        let m = bivariate(0.3);
        assert_eq!(m.condition(&BTreeMap::new()).unwrap(), m);
    }

    #[test]
    fn condition_errors() {
        let m = bivariate(0.3);
        assert!(matches!(
            m.condition(&BTreeMap::from([(5, 1.0)])),
            Err(ModelError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            m.condition(&BTreeMap::from([(0, 1.0), (1, 1.0)])),
            Err(ModelError::NothingLeft)
        ));
        let singular = GaussianModel::new(
            DVector::zeros(3),
            DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(
            singular.condition(&BTreeMap::from([(0, 1.0), (1, 1.0)])),
            Err(ModelError::SingularConditioning)
        ));
    }

    #[test]
    fn diagonal_conditioning_leaves_marginals() {
        let m = GaussianModel::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 4.0])),
        )
        .unwrap();
        let c = m.condition(&BTreeMap::from([(1, 10.0)])).unwrap();
        assert_eq!(c.mean().as_slice(), &[1.0, 3.0]);
        assert_eq!(c.cov()[(0, 0)], 0.5);
        assert_eq!(c.cov()[(1, 1)], 4.0);
    }

    #[test]
    fn layout_remaps_surviving_blocks() {
        let m = GaussianModel::new(DVector::from_fn(12, |i, _| i as f64), DMatrix::identity(12, 12))
            .unwrap()
            .with_layout(&["a", "b", "c"])
            .unwrap();
        let obs: BTreeMap<usize, f64> = (4..8).map(|i| (i, 0.0)).collect();
        let c = m.condition(&obs).unwrap();
        assert_eq!(c.dim(), 8);
        assert_eq!(c.block("a").unwrap().start, 0);
        assert_eq!(c.block("c").unwrap().start, 4);
        assert!(c.block("b").is_none());
        let mc = c.marginal("c").unwrap();
        assert_eq!(mc.mean().as_slice(), &[8.0, 9.0, 10.0, 11.0]);
        // marginal of a marginal is the same thing
        assert_eq!(mc.marginal("c").unwrap(), mc);
        assert!(matches!(m.marginal("zzz"), Err(ModelError::UnknownCategory(_))));
    }

    #[test]
    fn mahalanobis_cases() {
        let id = GaussianModel::new(DVector::from_vec(vec![1.0, 1.0]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(id.mahalanobis_sq(&[1.0, 1.0]).unwrap(), 0.0);
        assert!((id.mahalanobis_sq(&[2.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);

        // dense inverse oracle: [[2,1],[1,3]]^-1 = [[3,-1],[-1,2]] / 5
        let m = GaussianModel::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]))
            .unwrap();
        let x = [1.0, -2.0];
        let want = (3.0 * 1.0 - 2.0 * 1.0 * -2.0 + 2.0 * 4.0) / 5.0;
        assert!((m.mahalanobis_sq(&x).unwrap() - want).abs() < 1e-12);
        assert!(m.mahalanobis_sq(&[1.0]).is_err());
    }

    #[test]
    fn sampling_floor_model_returns_mean() {
        let m = GaussianModel::new(DVector::from_vec(vec![3.0, -2.0]), DMatrix::identity(2, 2) * 1e-8)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = m.sample(&mut rng).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-3 && (x[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m = bivariate(0.5);
        let a = m.sample(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = m.sample(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_converges() {
        let m = GaussianModel::new(
            DVector::from_vec(vec![1.0, -1.0, 0.5]),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.5]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut acc = DVector::zeros(3);
        for _ in 0..n {
            acc += m.sample(&mut rng).unwrap();
        }
        acc /= n as f64;
        let max_sigma = 2.0f64.sqrt();
        for i in 0..3 {
            assert!((acc[i] - m.mean()[i]).abs() < 0.02 * max_sigma);
        }
    }

    #[test]
    fn standard_normal_density_at_mean() {
        let m = GaussianModel::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let want = (2.0 * std::f64::consts::PI).powf(-1.5);
        assert!((m.density(&[0.0, 0.0, 0.0]).unwrap() - want).abs() < 1e-15);
    }
}
