//! Model and run configuration.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{KappaEstimator, KappaScale, SelectionConfig, SelectionMode};

/// Hyperparameters and run settings of one fit.
///
/// Variances (`sigma_*`) are variances, not standard deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_states: usize,
    pub sigma_xi: f64,
    pub sigma_rho: f64,
    pub sigma_z: f64,
    pub sigma_eta: f64,
    /// Prior means of the group baseline matrix; `None` uses 2 on the
    /// diagonal of non-reference states and 0 elsewhere.
    pub z0: Option<Vec<Vec<f64>>>,
    pub tau0: f64,
    pub n_burn: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub seed: u64,
    pub q_star: f64,
    /// `None` means uniform.
    pub initial_state_dist: Option<Vec<f64>>,
    /// One global scale shared by all state precisions instead of one per state.
    pub shared_global_shrinkage: bool,
    /// Weight of the exponential prior on precision diagonals, in units of
    /// pseudo-observations at the data's average variance. Zero gives the
    /// flat (improper) diagonal prior.
    pub diag_prior_pseudo_obs: f64,
    pub selection_mode: SelectionMode,
    pub fixed_threshold: Option<f64>,
    pub kappa_estimator: KappaEstimator,
    pub kappa_scale: KappaScale,
    pub pool_states: bool,
    pub change_point_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_states: 3,
            sigma_xi: 0.1,
            sigma_rho: 0.1,
            sigma_z: 0.1,
            sigma_eta: 0.1,
            z0: None,
            tau0: 1.0,
            n_burn: 5000,
            n_samples: 5000,
            thin: 1,
            seed: 1,
            q_star: 0.2,
            initial_state_dist: None,
            shared_global_shrinkage: false,
            diag_prior_pseudo_obs: 1.0,
            selection_mode: SelectionMode::Bfdr,
            fixed_threshold: None,
            kappa_estimator: KappaEstimator::Median,
            kappa_scale: KappaScale::Likelihood,
            pool_states: false,
            change_point_threshold: 0.95,
        }
    }
}

/// Named hyperparameter profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// All transition variances 0.1, `tau0 = 1`.
    Sim1,
    /// Tighter group-level variances (0.05), subject-level 0.1.
    CaseStudy,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" => Ok(Preset::Sim1),
            "case-study" | "case_study" => Ok(Preset::CaseStudy),
            other => Err(Error::config(format!("unknown preset {other:?}"))),
        }
    }
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        let base = ModelConfig::default();
        match p {
            Preset::Sim1 => base,
            Preset::CaseStudy => ModelConfig {
                sigma_z: 0.05,
                sigma_eta: 0.05,
                ..base
            },
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::config("n_states must be at least 1"));
        }
        if self.n_states > 255 {
            return Err(Error::config("n_states must be at most 255"));
        }
        for (name, v) in [
            ("sigma_xi", self.sigma_xi),
            ("sigma_rho", self.sigma_rho),
            ("sigma_z", self.sigma_z),
            ("sigma_eta", self.sigma_eta),
            ("tau0", self.tau0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be positive"));
        }
        if !(self.q_star > 0.0 && self.q_star < 1.0) {
            return Err(Error::config(format!("q_star must lie in (0,1), got {}", self.q_star)));
        }
        if !(self.diag_prior_pseudo_obs >= 0.0 && self.diag_prior_pseudo_obs.is_finite()) {
            return Err(Error::config("diag_prior_pseudo_obs must be non-negative"));
        }
        if let Some(z0) = &self.z0 {
            if z0.len() != self.n_states || z0.iter().any(|r| r.len() != self.n_states) {
                return Err(Error::config("z0 must be an n_states x n_states matrix"));
            }
            if z0.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::config("z0 entries must be finite"));
            }
        }
        if let Some(p) = &self.initial_state_dist {
            let sum: f64 = p.iter().sum();
            if p.len() != self.n_states || p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-8 {
                return Err(Error::config("initial_state_dist must be a simplex vector of length n_states"));
            }
        }
        if self.selection_mode == SelectionMode::FixedThreshold {
            match self.fixed_threshold {
                Some(t) if t > 0.0 && t.is_finite() => {}
                _ => return Err(Error::config("a positive fixed_threshold is required for fixed_threshold mode")),
            }
        }
        Ok(())
    }

    /// Prior means of the group baseline log-odds, column 0 ignored.
    pub fn z0_matrix(&self) -> DMatrix<f64> {
        let s = self.n_states;
        match &self.z0 {
            Some(rows) => DMatrix::from_fn(s, s, |r, c| if c == 0 { 0.0 } else { rows[r][c] }),
            None => DMatrix::from_fn(s, s, |r, c| if r == c && r >= 1 { 2.0 } else { 0.0 }),
        }
    }

    pub fn initial_distribution(&self) -> DVector<f64> {
        match &self.initial_state_dist {
            Some(p) => DVector::from_column_slice(p),
            None => DVector::from_element(self.n_states, 1.0 / self.n_states as f64),
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            q_star: self.q_star,
            mode: self.selection_mode,
            fixed_threshold: self.fixed_threshold,
            kappa_estimator: self.kappa_estimator,
            kappa_scale: self.kappa_scale,
            pool_states: self.pool_states,
        }
    }

    /// Number of stored draws for this configuration.
    pub fn n_stored(&self) -> usize {
        self.n_samples / self.thin
    }
}
