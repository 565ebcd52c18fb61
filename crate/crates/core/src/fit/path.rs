use rayon::prelude::*;

use super::bcd::{bcd_fit, blocks_stay_fused, FitResult, Penalty, Problem};
use super::coef::Coefficients;
use super::design::Design;
use super::logistic::{logistic_fit, logistic_smooth_loss, stays_fused};
use super::{Family, FitConfig};
use crate::error::{Error, Result};

/// Returned by [`lambda_max`] when no level of `lambda` leaves anything to fuse.
pub const LAMBDA_FLOOR: f64 = 1e-10;
/// Relative width at which the bisection for `lambda_max` stops.
const LAMBDA_MAX_REL_TOL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct PathEntry {
    pub gamma: f64,
    pub lambda: f64,
    pub coef: Coefficients,
    pub objective: f64,
    pub df: usize,
    /// Residual sum of squares (linear) or deviance (logistic) on the training data.
    pub rss: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub descent_violations: usize,
    /// Index of the entry used as the warm start; `None` for the null model.
    pub init: Option<usize>,
    pub cv_error: Option<f64>,
    pub ebic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SolutionPath {
    pub entries: Vec<PathEntry>,
}

impl SolutionPath {
    pub fn for_gamma(&self, gamma: f64) -> impl Iterator<Item = &PathEntry> {
        self.entries.iter().filter(move |e| e.gamma == gamma)
    }

    pub fn gammas(&self) -> Vec<f64> {
        let mut g: Vec<f64> = Vec::new();
        for e in &self.entries {
            if !g.contains(&e.gamma) {
                g.push(e.gamma);
            }
        }
        g
    }
}

/// One fit of the configured family.
pub(crate) fn fit_one(
    design: &Design,
    y: &[f64],
    cfg: &FitConfig,
    gamma: f64,
    lambda: f64,
    init: Coefficients,
) -> Result<FitResult> {
    match cfg.family {
        Family::Linear => bcd_fit(design, y, gamma, lambda, init, cfg),
        Family::Logistic => Ok(logistic_fit(design, y, gamma, lambda, init, cfg)?.fit),
    }
}

/// Training loss summary stored in path entries.
pub(crate) fn training_rss(design: &Design, y: &[f64], coef: &Coefficients, family: Family) -> f64 {
    match family {
        Family::Linear => {
            let eta = coef.linear_predictor(design);
            y.iter().zip(eta).map(|(a, b)| (a - b) * (a - b)).sum()
        }
        Family::Logistic => 2.0 * design.n() as f64 * logistic_smooth_loss(design, y, coef),
    }
}

/// Level above which the null-consistency condition holds for every block at
/// the null model, i.e. a starting point for the search.
fn screening_bound(design: &Design, y: &[f64], gamma: f64, family: Family) -> f64 {
    let null = Coefficients::null(design, y, family);
    // working residual and weight at the null model
    let (resid, weight): (Vec<f64>, f64) = match family {
        Family::Linear => (y.iter().map(|v| v - null.mu).collect(), 1.0),
        Family::Logistic => {
            let p = 1.0 / (1.0 + (-null.mu).exp());
            let w = p * (1.0 - p);
            (y.iter().map(|v| (v - p) / w).collect(), w)
        }
    };
    let mut bound: f64 = 0.0;
    for v in design.vars() {
        let k = v.n_levels();
        let mut sums = vec![0.0; k];
        for (r, &c) in resid.iter().zip(v.codes()) {
            sums[c] += r;
        }
        let spread = sums
            .iter()
            .zip(v.counts())
            .map(|(s, &n)| (s / n as f64).abs())
            .fold(0.0, f64::max);
        let factor = 2.0_f64.min((gamma * weight).sqrt()) * (k as f64).sqrt() / weight;
        bound = bound.max(spread / factor);
    }
    bound
}

/// Smallest `lambda` (to within 1%) at which the fully fused fit is a fixed
/// point of the block updates, so a path started there stays fused.
///
/// The fused fit is the intercept (and continuous slopes) obtained at a
/// level far above the screening bound; the search doubles from the bound
/// and then bisects, each probe costing one univariate solve per variable.
pub fn lambda_max(design: &Design, y: &[f64], gamma: f64, cfg: &FitConfig) -> Result<f64> {
    let bound = screening_bound(design, y, gamma, cfg.family);
    if !(bound > LAMBDA_FLOOR) && design.n_continuous() == 0 {
        return Ok(LAMBDA_FLOOR);
    }
    let huge = 1e6 * bound.max(1.0);
    let reference = fit_one(design, y, cfg, gamma, huge, Coefficients::null(design, y, cfg.family))?.coef;
    if !reference.all_fused() {
        return Err(Error::invalid("no lambda fuses every variable"));
    }
    let fused = |lambda: f64| -> Result<bool> {
        let pen = Penalty::new(gamma, lambda, cfg.alpha);
        match cfg.family {
            Family::Linear => {
                let prob = Problem { design, target: y, weights: None, update_intercept: false };
                blocks_stay_fused(&prob, pen, reference.clone())
            }
            Family::Logistic => stays_fused(design, y, pen, reference.clone()),
        }
    };
    let mut hi = bound.max(LAMBDA_FLOOR) * 1.01;
    let mut doublings = 0;
    while !fused(hi)? {
        hi *= 2.0;
        doublings += 1;
        if doublings > 80 {
            return Err(Error::invalid("no lambda fuses every variable"));
        }
    }
    let mut lo = 0.0;
    while hi - lo > LAMBDA_MAX_REL_TOL * hi {
        if hi < LAMBDA_FLOOR {
            return Ok(LAMBDA_FLOOR);
        }
        let mid = 0.5 * (lo + hi);
        if fused(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Geometric sequence from `lambda_max` down to `path_ratio * lambda_max`.
pub fn lambda_sequence(lambda_max: f64, cfg: &FitConfig) -> Vec<f64> {
    let len = cfg.path_len;
    if len == 1 {
        return vec![lambda_max];
    }
    (0..len)
        .map(|i| lambda_max * cfg.path_ratio.powf(i as f64 / (len - 1) as f64))
        .collect()
}

/// Warm-started fits along `lambdas` for one `gamma`. Entry indices in the
/// lineage are offset by `first_index`.
pub fn fit_path_with_lambdas(
    design: &Design,
    y: &[f64],
    cfg: &FitConfig,
    gamma: f64,
    lambdas: &[f64],
    first_index: usize,
) -> Result<Vec<PathEntry>> {
    let mut entries: Vec<PathEntry> = Vec::with_capacity(lambdas.len());
    let mut init = Coefficients::null(design, y, cfg.family);
    for (i, &lambda) in lambdas.iter().enumerate() {
        let fit = fit_one(design, y, cfg, gamma, lambda, init)?;
        init = fit.coef.clone();
        entries.push(PathEntry {
            gamma,
            lambda,
            df: fit.coef.df(),
            rss: training_rss(design, y, &fit.coef, cfg.family),
            coef: fit.coef,
            objective: fit.objective,
            sweeps: fit.sweeps,
            converged: fit.converged,
            descent_violations: fit.descent_violations,
            init: (i > 0).then(|| first_index + i - 1),
            cv_error: None,
            ebic: None,
        });
    }
    Ok(entries)
}

/// Full path for every `gamma` in the grid; gammas are processed in
/// parallel and the entries concatenated in grid order.
pub fn fit_path(design: &Design, y: &[f64], cfg: &FitConfig) -> Result<SolutionPath> {
    cfg.validate()?;
    let per_gamma = cfg
        .gamma_grid
        .par_iter()
        .enumerate()
        .map(|(g, &gamma)| {
            let lmax = lambda_max(design, y, gamma, cfg)?;
            fit_path_with_lambdas(design, y, cfg, gamma, &lambda_sequence(lmax, cfg), g * cfg.path_len)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SolutionPath { entries: per_gamma.into_iter().flatten().collect() })
}

/// `n log(RSS/n) + df (log n + 2 zeta log(total_levels))`.
pub fn ebic(entry: &PathEntry, n: usize, total_levels: usize, zeta: f64) -> f64 {
    let n_f = n as f64;
    let rss = entry.rss.max(f64::MIN_POSITIVE);
    n_f * (rss / n_f).ln() + entry.df as f64 * (n_f.ln() + 2.0 * zeta * (total_levels.max(1) as f64).ln())
}

/// Fills in the EBIC of every entry and returns the index of the smallest
/// (first one on ties).
pub fn ebic_select(path: &mut SolutionPath, n: usize, total_levels: usize, zeta: f64) -> Result<usize> {
    if path.entries.is_empty() {
        return Err(Error::invalid("empty path"));
    }
    let mut best = 0;
    for e in path.entries.iter_mut() {
        e.ebic = Some(ebic(e, n, total_levels, zeta));
    }
    for i in 1..path.entries.len() {
        if path.entries[i].ebic < path.entries[best].ebic {
            best = i;
        }
    }
    Ok(best)
}
