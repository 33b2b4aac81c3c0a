use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::learners::DEFAULT_LAMBDA;
use crate::prob_models::DEFAULT_RIDGE;

/// Every run and training hyperparameter. Unknown fields in a config file are
/// rejected; missing ones take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Prior agents per category (highest detector confidence first).
    pub p: usize,
    /// Initial explorer agents.
    pub p_prime: usize,
    pub max_iterations: usize,
    /// Internal support above which a proposal gets a refiner.
    pub tau_refine: f64,
    /// Total support above which a proposal may become a detection.
    pub tau_detect: f64,
    pub w_int: f64,
    pub w_ext: f64,
    /// Added to each total support in the match score.
    pub pad: f64,
    /// Maximum refiner chain depth.
    pub r_max: usize,
    /// Lesion: explorers sample uniformly and the relationship model is unused.
    pub uniform_mode: bool,
    pub uniform_area_range: (f64, f64),
    pub uniform_aspect_range: (f64, f64),
    pub seed: u64,
    /// Ridge strength for localizers and refiners.
    pub lambda: f64,
    /// Relative covariance ridge for the relationship model.
    pub cov_ridge: f64,
    /// Jittered training crops per ground-truth box.
    pub crops_per_box: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            p: 10,
            p_prime: 30,
            max_iterations: 300,
            tau_refine: 0.3,
            tau_detect: 0.5,
            w_int: 0.6,
            w_ext: 0.4,
            pad: 0.01,
            r_max: 2,
            uniform_mode: false,
            uniform_area_range: (0.01, 0.5),
            uniform_aspect_range: (0.25, 4.0),
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            cov_ridge: DEFAULT_RIDGE,
            crops_per_box: 20,
        }
    }
}

impl EngineConfig {
    /// Sets the internal weight and the complementary external weight.
    pub fn with_w_int(mut self, w_int: f64) -> Self {
        self.w_int = w_int;
        self.w_ext = 1.0 - w_int;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::Config(msg));
        if self.p == 0 || self.p_prime == 0 {
            return bad("p and p_prime must be positive".into());
        }
        if !(self.w_int >= 0.0 && self.w_ext >= 0.0) || (self.w_int + self.w_ext - 1.0).abs() > 1e-9 {
            return bad(format!("support weights must be nonnegative and sum to 1 (got {} + {})", self.w_int, self.w_ext));
        }
        for (name, v) in [("tau_refine", self.tau_refine), ("tau_detect", self.tau_detect)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.pad > 0.0) {
            return bad("pad must be positive".into());
        }
        for (name, (lo, hi)) in [
            ("uniform_area_range", self.uniform_area_range),
            ("uniform_aspect_range", self.uniform_aspect_range),
        ] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return bad(format!("{name} must satisfy 0 < lo < hi, got ({lo}, {hi})"));
            }
        }
        if !(self.lambda >= 0.0) || !(self.cov_ridge >= 0.0) {
            return bad("lambda and cov_ridge must be nonnegative".into());
        }
        Ok(())
    }
}
