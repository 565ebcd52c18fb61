//! Penalised logistic regression by proximal Newton: each outer iteration
//! fits the penalised weighted least-squares surrogate at the current
//! linear predictor and takes the longest step (halving from 1) that does
//! not increase the penalised objective.

use super::bcd::{self, check_response, FitResult, Penalty, Problem};
use super::coef::Coefficients;
use super::design::Design;
use super::FitConfig;
use crate::error::{Error, Result};

/// Floor for the IRLS weights `p(1-p)`.
pub const WEIGHT_FLOOR: f64 = 1e-5;
const MAX_HALVINGS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    /// `objective` is the penalised objective and `sweeps` counts outer
    /// iterations.
    pub fit: FitResult,
    /// Penalised objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `1/n sum_i log(1 + exp(eta_i)) - y_i eta_i`.
pub fn logistic_smooth_loss(design: &Design, y: &[f64], coef: &Coefficients) -> f64 {
    let eta = coef.linear_predictor(design);
    y.iter().zip(&eta).map(|(y, e)| softplus(*e) - y * e).sum::<f64>() / design.n() as f64
}

/// Smooth loss plus penalty.
pub fn penalized_deviance(design: &Design, y: &[f64], coef: &Coefficients, pen: &Penalty) -> Result<f64> {
    Ok(logistic_smooth_loss(design, y, coef) + bcd::penalty_value(design, coef, pen)?)
}

struct Surrogate {
    z: Vec<f64>,
    w: Vec<f64>,
}

fn surrogate(eta: &[f64], y: &[f64]) -> Surrogate {
    let mut z = Vec::with_capacity(eta.len());
    let mut w = Vec::with_capacity(eta.len());
    for (&e, &yi) in eta.iter().zip(y) {
        let p = sigmoid(e);
        let wi = (p * (1.0 - p)).max(WEIGHT_FLOOR);
        let step = ((yi - p) / wi).clamp(-1.0 / WEIGHT_FLOOR, 1.0 / WEIGHT_FLOOR);
        z.push(e + step);
        w.push(wi);
    }
    Surrogate { z, w }
}

/// Whether the surrogate at `coef` (fully fused) keeps every block fused.
pub(crate) fn stays_fused(design: &Design, y: &[f64], pen: Penalty, coef: Coefficients) -> Result<bool> {
    let s = surrogate(&coef.linear_predictor(design), y);
    let prob = Problem { design, target: &s.z, weights: Some(&s.w), update_intercept: true };
    bcd::blocks_stay_fused(&prob, pen, coef)
}

/// Gradient of the quadratic surrogate `1/(2n) sum W (z - eta)^2` at the
/// expansion point, ordered as `mu`, then `theta` variable by variable,
/// then `beta`.
pub fn surrogate_gradient(design: &Design, y: &[f64], coef: &Coefficients) -> Vec<f64> {
    let eta = coef.linear_predictor(design);
    let s = surrogate(&eta, y);
    let n = design.n() as f64;
    // d/d eta_i of the surrogate
    let g: Vec<f64> = s.w.iter().zip(&s.z).zip(&eta).map(|((w, z), e)| -w * (z - e) / n).collect();
    let mut out = vec![g.iter().sum()];
    for v in design.vars() {
        let mut block = vec![0.0; v.n_levels()];
        for (gi, &c) in g.iter().zip(v.codes()) {
            block[c] += gi;
        }
        out.extend(block);
    }
    for l in 0..design.n_continuous() {
        out.push(g.iter().zip(design.z(l)).map(|(a, b)| a * b).sum());
    }
    out
}

fn check_binary(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("logistic response must be 0/1"));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::invalid("logistic response needs both classes"));
    }
    Ok(())
}

pub fn logistic_fit(
    design: &Design,
    y: &[f64],
    gamma: f64,
    lambda: f64,
    init: Coefficients,
    cfg: &FitConfig,
) -> Result<LogisticFit> {
    check_response(design, y)?;
    check_binary(y)?;
    if design.hierarchy().is_some() {
        return Err(Error::Hierarchy("nested variables are supported for the linear family only".into()));
    }
    let pen = Penalty::new(gamma, lambda, cfg.alpha);
    let mut coef = init;
    let mut obj = penalized_deviance(design, y, &coef, &pen)?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut violations = 0;
    let mut iters = 0;

    while iters < cfg.pn_max_iters {
        iters += 1;
        let eta = coef.linear_predictor(design);
        let s = surrogate(&eta, y);
        let prob = Problem { design, target: &s.z, weights: Some(&s.w), update_intercept: true };
        let inner = bcd::run(&prob, pen, coef.clone(), cfg)?;
        violations += inner.descent_violations;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = coef.lerp(&inner.coef, step);
            let v = penalized_deviance(design, y, &cand, &pen)?;
            if v.is_finite() && v <= obj {
                accepted = Some((cand, v));
                break;
            }
            step *= 0.5;
        }
        let Some((next, v)) = accepted else {
            // no decrease available along the Newton direction
            converged = true;
            break;
        };
        let rel = (obj - v) / obj.abs().max(f64::MIN_POSITIVE);
        coef = next;
        obj = v;
        trace.push(v);
        if rel < cfg.pn_tol {
            converged = true;
            break;
        }
    }

    if !coef.is_finite() {
        return Err(Error::NonFinite("logistic coefficients".into()));
    }
    Ok(LogisticFit {
        fit: FitResult { coef, objective: obj, sweeps: iters, converged, descent_violations: violations },
        trace,
    })
}
