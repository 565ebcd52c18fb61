use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::coef::Coefficients;
use super::design::Design;
use super::path::{fit_path_with_lambdas, lambda_max, lambda_sequence, SolutionPath};
use super::{Family, FitConfig};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct CvRow {
    pub gamma: f64,
    pub lambda: f64,
    /// Mean held-out squared error (linear) or deviance (logistic).
    pub error: f64,
    /// Standard error of the fold means.
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub gamma: f64,
    pub lambda: f64,
    /// Index of the chosen row in `table` and entry in `path`.
    pub best: usize,
    /// One row per `(gamma, lambda)`, gammas in grid order.
    pub table: Vec<CvRow>,
    /// Full-data path on the same grid with `cv_error` filled in.
    pub path: SolutionPath,
    pub folds: Vec<usize>,
}

/// Fold of every observation: a seeded shuffle dealt round-robin.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

fn held_out_loss(y: f64, eta: f64, family: Family) -> f64 {
    match family {
        Family::Linear => (y - eta) * (y - eta),
        Family::Logistic => {
            let p = (1.0 / (1.0 + (-eta).exp())).clamp(1e-15, 1.0 - 1e-15);
            -2.0 * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
    }
}

/// Per-lambda held-out loss sums for one fold.
fn fold_losses(
    design: &Design,
    y: &[f64],
    cfg: &FitConfig,
    gamma: f64,
    lambdas: &[f64],
    folds: &[usize],
    fold: usize,
) -> Result<Vec<f64>> {
    let train: Vec<usize> = (0..design.n()).filter(|&i| folds[i] != fold).collect();
    let test: Vec<usize> = (0..design.n()).filter(|&i| folds[i] == fold).collect();
    let (sub, maps) = design.subset(&train)?;
    let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let entries = fit_path_with_lambdas(&sub, &ty, cfg, gamma, lambdas, 0)?;

    let rows: Vec<(Vec<Option<usize>>, Vec<f64>)> = test
        .iter()
        .map(|&i| {
            let levels = design.vars().iter().map(|v| Some(v.codes()[i])).collect();
            let z = (0..design.n_continuous())
                .map(|l| design.z(l)[i] + design.z_center()[l])
                .collect();
            (levels, z)
        })
        .collect();
    Ok(entries
        .iter()
        .map(|e| {
            let full: Coefficients = e.coef.expand(&maps);
            rows.iter()
                .zip(&test)
                .map(|((levels, z), &i)| held_out_loss(y[i], full.predict_row(levels, z), cfg.family))
                .sum()
        })
        .collect())
}

/// K-fold cross-validation over the gamma grid and the full-data lambda
/// sequence of each gamma. The minimiser of the mean held-out loss is
/// chosen; ties go to the larger lambda, then the smaller gamma.
pub fn cross_validate(design: &Design, y: &[f64], cfg: &FitConfig) -> Result<CvResult> {
    cfg.validate()?;
    let n = design.n();
    let folds = assign_folds(n, cfg.cv_folds, cfg.seed);
    let fold_sizes: Vec<usize> = (0..cfg.cv_folds).map(|f| folds.iter().filter(|&&x| x == f).count()).collect();

    let grids = cfg
        .gamma_grid
        .par_iter()
        .map(|&g| Ok(lambda_sequence(lambda_max(design, y, g, cfg)?, cfg)))
        .collect::<Result<Vec<_>>>()?;

    // job (g, None) is the full-data path, (g, Some(f)) a training fold
    let jobs: Vec<(usize, Option<usize>)> = (0..cfg.gamma_grid.len())
        .flat_map(|g| std::iter::once((g, None)).chain((0..cfg.cv_folds).map(move |f| (g, Some(f)))))
        .collect();
    enum Out {
        Path(Vec<super::path::PathEntry>),
        Fold(Vec<f64>),
    }
    let outputs = jobs
        .par_iter()
        .map(|&(g, fold)| -> Result<Out> {
            let gamma = cfg.gamma_grid[g];
            match fold {
                None => Ok(Out::Path(fit_path_with_lambdas(design, y, cfg, gamma, &grids[g], g * cfg.path_len)?)),
                Some(f) => Ok(Out::Fold(fold_losses(design, y, cfg, gamma, &grids[g], &folds, f)?)),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut path = SolutionPath::default();
    let mut table = Vec::new();
    let mut it = outputs.into_iter();
    for (g, &gamma) in cfg.gamma_grid.iter().enumerate() {
        let Some(Out::Path(mut entries)) = it.next() else { unreachable!() };
        let fold_sums: Vec<Vec<f64>> = (0..cfg.cv_folds)
            .map(|_| match it.next() {
                Some(Out::Fold(v)) => v,
                _ => unreachable!(),
            })
            .collect();
        for (l, &lambda) in grids[g].iter().enumerate() {
            let total: f64 = fold_sums.iter().map(|s| s[l]).sum();
            let error = total / n as f64;
            let means: Vec<f64> = fold_sums
                .iter()
                .zip(&fold_sizes)
                .map(|(s, &m)| s[l] / m.max(1) as f64)
                .collect();
            let k = means.len() as f64;
            let avg = means.iter().sum::<f64>() / k;
            let var = means.iter().map(|m| (m - avg) * (m - avg)).sum::<f64>() / (k - 1.0);
            table.push(CvRow { gamma, lambda, error, se: (var / k).sqrt() });
            entries[l].cv_error = Some(error);
        }
        path.entries.extend(entries);
    }

    let mut best = 0;
    for i in 1..table.len() {
        let (a, b) = (&table[i], &table[best]);
        let tol = 1e-12 * b.error.abs().max(f64::MIN_POSITIVE);
        let better = if (a.error - b.error).abs() <= tol {
            a.lambda > b.lambda || (a.lambda == b.lambda && a.gamma < b.gamma)
        } else {
            a.error < b.error
        };
        if better {
            best = i;
        }
    }
    Ok(CvResult { gamma: table[best].gamma, lambda: table[best].lambda, best, table, path, folds })
}
