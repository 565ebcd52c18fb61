use serde::{Deserialize, Serialize};

use super::design::Design;
use super::Family;
use crate::univariate::{cluster_ids, CLUSTER_TOL};

/// A coefficient counts as nonzero above this magnitude.
pub const ZERO_TOL: f64 = 1e-8;

/// Fitted intercept, per-level coefficients and continuous slopes.
///
/// Predictions are `mu + sum_j theta[j][level_j] + sum_l beta[l] * (z_l - z_center[l])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub mu: f64,
    pub theta: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub z_center: Vec<f64>,
}

impl Coefficients {
    pub fn zeros(design: &Design, mu: f64) -> Self {
        Self {
            mu,
            theta: design.vars().iter().map(|v| vec![0.0; v.n_levels()]).collect(),
            beta: vec![0.0; design.n_continuous()],
            z_center: design.z_center().to_vec(),
        }
    }

    /// Intercept-only model: the mean response, or its logit.
    pub fn null(design: &Design, y: &[f64], family: Family) -> Self {
        let mean = fit_intercept(y);
        let mu = match family {
            Family::Linear => mean,
            Family::Logistic => {
                let p = mean.clamp(1e-10, 1.0 - 1e-10);
                (p / (1.0 - p)).ln()
            }
        };
        Self::zeros(design, mu)
    }

    /// Linear predictor at every training row.
    pub fn linear_predictor(&self, design: &Design) -> Vec<f64> {
        let mut eta = vec![self.mu; design.n()];
        for (v, th) in design.vars().iter().zip(&self.theta) {
            for (e, &c) in eta.iter_mut().zip(v.codes()) {
                *e += th[c];
            }
        }
        for (l, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                for (e, z) in eta.iter_mut().zip(design.z(l)) {
                    *e += b * z;
                }
            }
        }
        eta
    }

    /// Linear predictor for one encoded row. Unseen levels (`None`)
    /// contribute nothing. `z` holds raw (uncentred) values.
    pub fn predict_row(&self, levels: &[Option<usize>], z: &[f64]) -> f64 {
        let mut eta = self.mu;
        for (th, level) in self.theta.iter().zip(levels) {
            if let Some(&v) = level.and_then(|l| th.get(l)) {
                eta += v;
            }
        }
        for ((b, c), v) in self.beta.iter().zip(&self.z_center).zip(z) {
            eta += b * (v - c);
        }
        eta
    }

    /// Re-indexes onto the full level sets: `maps[j][old]` is the code of
    /// original level `old` in this fit, and missing levels get 0.
    pub fn expand(&self, maps: &[Vec<Option<usize>>]) -> Coefficients {
        let theta = self
            .theta
            .iter()
            .zip(maps)
            .map(|(th, map)| map.iter().map(|m| m.map_or(0.0, |i| th[i])).collect())
            .collect();
        Coefficients { theta, ..self.clone() }
    }

    pub fn clusters(&self, j: usize) -> Vec<usize> {
        cluster_ids(&self.theta[j], CLUSTER_TOL)
    }

    pub fn n_clusters(&self, j: usize) -> usize {
        self.clusters(j).into_iter().max().map_or(0, |m| m + 1)
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.theta[j].iter().any(|t| t.abs() > ZERO_TOL)
    }

    /// All levels of variable `j` share one coefficient.
    pub fn is_fused(&self, j: usize) -> bool {
        let t = &self.theta[j];
        let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        t.is_empty() || hi - lo <= ZERO_TOL
    }

    pub fn all_fused(&self) -> bool {
        (0..self.theta.len()).all(|j| !self.is_selected(j))
    }

    /// `1 + sum_j (clusters_j - 1) + #nonzero beta`.
    pub fn df(&self) -> usize {
        1 + (0..self.theta.len())
            .map(|j| self.n_clusters(j).saturating_sub(1))
            .sum::<usize>()
            + self.beta.iter().filter(|b| b.abs() > ZERO_TOL).count()
    }

    /// Largest `|sum_k n_jk theta_jk|` over variables.
    pub fn identifiability_defect(&self, design: &Design) -> f64 {
        design
            .vars()
            .iter()
            .zip(&self.theta)
            .map(|(v, th)| {
                v.counts()
                    .iter()
                    .zip(th)
                    .map(|(&n, t)| n as f64 * t)
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.mu.is_finite()
            && self.theta.iter().flatten().all(|t| t.is_finite())
            && self.beta.iter().all(|b| b.is_finite())
    }

    /// `self + t * (other - self)`.
    pub(crate) fn lerp(&self, other: &Coefficients, t: f64) -> Coefficients {
        let mix = |a: f64, b: f64| a + t * (b - a);
        Coefficients {
            mu: mix(self.mu, other.mu),
            theta: self
                .theta
                .iter()
                .zip(&other.theta)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| mix(x, y)).collect())
                .collect(),
            beta: self.beta.iter().zip(&other.beta).map(|(&x, &y)| mix(x, y)).collect(),
            z_center: self.z_center.clone(),
        }
    }
}

/// Mean response.
pub fn fit_intercept(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}
