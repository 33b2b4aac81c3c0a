use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ModelError;

pub const SIGMA_FLOOR: f64 = 1e-4;

/// Log-normal distribution parameterized in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalModel {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalModel {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, ModelError> {
        if !mu.is_finite() || !sigma.is_finite() {
            return Err(ModelError::NonFinite);
        }
        Ok(Self {
            mu,
            sigma: sigma.max(SIGMA_FLOOR),
        })
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mu + self.sigma * z).exp()
    }

    pub fn density(&self, v: f64) -> Result<f64, ModelError> {
        if !(v > 0.0) {
            return Err(ModelError::NonPositive(v));
        }
        let z = (v.ln() - self.mu) / self.sigma;
        Ok((-0.5 * z * z).exp() / (v * self.sigma * (2.0 * std::f64::consts::PI).sqrt()))
    }
}

/// `mu = mean(ln v)`, `sigma = max(population std of ln v, SIGMA_FLOOR)`.
pub fn fit_lognormal(values: &[f64]) -> Result<LogNormalModel, ModelError> {
    if values.len() < 2 {
        return Err(ModelError::TooFewSamples {
            needed: 2,
            found: values.len(),
        });
    }
    if let Some(&bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(ModelError::NonPositive(bad));
    }
    let n = values.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
    LogNormalModel::new(mu, var.sqrt())
}
