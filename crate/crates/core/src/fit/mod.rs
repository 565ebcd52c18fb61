//! Multivariate fitting: block coordinate descent, solution paths, model
//! selection and the logistic extension.

mod bcd;
mod coef;
mod cv;
mod design;
mod logistic;
mod path;
mod predict;
mod refit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bcd::{bcd_fit, hierarchical_fit, objective, penalty_value, FitResult, Penalty};
pub use coef::{fit_intercept, Coefficients, ZERO_TOL};
pub use cv::{assign_folds, cross_validate, CvResult, CvRow};
pub use design::{CategoricalVar, Design, Hierarchy};
pub use logistic::{logistic_fit, logistic_smooth_loss, penalized_deviance, surrogate_gradient, LogisticFit};
pub use path::{ebic, ebic_select, fit_path, fit_path_with_lambdas, lambda_max, lambda_sequence, PathEntry, SolutionPath};
pub use predict::{predict, predict_training};
pub use refit::grouped_least_squares;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Logistic,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "gaussian" => Ok(Family::Linear),
            "logistic" | "binomial" => Ok(Family::Logistic),
            other => Err(Error::invalid(format!("unknown family {other:?}"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Linear => "linear",
            Family::Logistic => "logistic",
        })
    }
}

/// Settings for paths, cross-validation and the inner solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub family: Family,
    pub gamma_grid: Vec<f64>,
    pub path_len: usize,
    /// Smallest lambda on the path as a fraction of `lambda_max`.
    pub path_ratio: f64,
    /// l1 level for continuous covariates.
    pub alpha: f64,
    pub bcd_tol: f64,
    pub bcd_max_sweeps: usize,
    pub pn_max_iters: usize,
    pub pn_tol: f64,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            family: Family::Linear,
            gamma_grid: vec![8.0, 32.0],
            path_len: 100,
            path_ratio: 0.01,
            alpha: 0.0,
            bcd_tol: 1e-9,
            bcd_max_sweeps: 1000,
            pn_max_iters: 25,
            pn_tol: 1e-8,
            cv_folds: 5,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Defaults for the logistic family (`gamma = 100`).
    pub fn logistic() -> Self {
        Self { family: Family::Logistic, gamma_grid: vec![100.0], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::invalid("gamma grid must be nonempty and positive"));
        }
        if self.path_len == 0 {
            return Err(Error::invalid("path length must be positive"));
        }
        if !(self.path_ratio > 0.0 && self.path_ratio < 1.0) {
            return Err(Error::invalid(format!("path ratio {} not in (0, 1)", self.path_ratio)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be nonnegative"));
        }
        for (name, v) in [("bcd_tol", self.bcd_tol), ("pn_tol", self.pn_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.bcd_max_sweeps == 0 || self.pn_max_iters == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        if self.cv_folds < 2 {
            return Err(Error::invalid("at least two folds are required"));
        }
        Ok(())
    }
}
