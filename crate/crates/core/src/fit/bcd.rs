//! Block coordinate descent on a weighted least-squares loss.
//!
//! The engine minimises
//!
//! `1/(2n) sum_i W_i (t_i - eta_i)^2 + sum_j pen_j(theta_j) + alpha * |beta|_1`
//!
//! cycling over the categorical blocks (each solved exactly by
//! [`solve_exact`]), the continuous coordinates and, for weighted problems,
//! the intercept. Unit weights give the linear model; the logistic fit calls
//! it with IRLS weights.

use rayon::prelude::*;

use super::coef::Coefficients;
use super::design::Design;
use super::refit::partition_newton;
use super::FitConfig;
use crate::error::{Error, Result};
use crate::penalty::McpParams;
use crate::univariate::{solve_exact, WeightedMeans};

/// Outcome of one penalised fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub coef: Coefficients,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Block updates that increased the objective beyond rounding.
    pub descent_violations: usize,
}

/// Tuning levels shared by all blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penalty {
    pub gamma: f64,
    pub lambda: f64,
    /// Level for within-group gaps of a nested variable.
    pub lambda_child: f64,
    pub alpha: f64,
}

impl Penalty {
    pub fn new(gamma: f64, lambda: f64, alpha: f64) -> Self {
        Self { gamma, lambda, lambda_child: lambda, alpha }
    }

    /// MCP for a block with `k` levels: `lambda_j = lambda * sqrt(k)`.
    fn block(&self, lambda: f64, k: usize) -> Result<McpParams> {
        McpParams::new(self.gamma, lambda * (k as f64).sqrt())
    }
}

/// A sweep only counts as converged if no coefficient moved more than this.
const COEF_TOL: f64 = 1e-9;

pub(crate) struct Problem<'a> {
    pub design: &'a Design,
    pub target: &'a [f64],
    pub weights: Option<&'a [f64]>,
    pub update_intercept: bool,
}

impl Problem<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }
}

fn sorted_gap_penalty(values: impl Iterator<Item = f64>, p: &McpParams) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.windows(2).map(|w| p.eval(w[1] - w[0])).sum()
}

/// Penalty of block `j`.
pub(crate) fn block_penalty(design: &Design, theta: &[f64], j: usize, pen: &Penalty) -> Result<f64> {
    match design.hierarchy() {
        Some(h) if h.child == j => {
            let mut total = 0.0;
            for group in &h.groups {
                let p = pen.block(pen.lambda_child, group.len())?;
                total += sorted_gap_penalty(group.iter().map(|&l| theta[l]), &p);
            }
            Ok(total)
        }
        _ => {
            let p = pen.block(pen.lambda, theta.len())?;
            Ok(sorted_gap_penalty(theta.iter().copied(), &p))
        }
    }
}

/// Total penalty of `coef`.
pub fn penalty_value(design: &Design, coef: &Coefficients, pen: &Penalty) -> Result<f64> {
    let mut total = pen.alpha * coef.beta.iter().map(|b| b.abs()).sum::<f64>();
    for (j, th) in coef.theta.iter().enumerate() {
        total += block_penalty(design, th, j, pen)?;
    }
    Ok(total)
}

/// Linear-model objective `1/(2n) |y - eta|^2 + penalty`.
pub fn objective(design: &Design, y: &[f64], coef: &Coefficients, pen: &Penalty) -> Result<f64> {
    let eta = coef.linear_predictor(design);
    let rss: f64 = y.iter().zip(&eta).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(rss / (2.0 * design.n() as f64) + penalty_value(design, coef, pen)?)
}

/// Univariate solution of block data, shifted to the exact null solution
/// when the null-consistency condition certifies it.
fn solve_block(m: &WeightedMeans, p: &McpParams) -> Result<Vec<f64>> {
    let w = m.weights();
    let total: f64 = w.iter().sum();
    let centre = w.iter().zip(m.means()).map(|(a, b)| a * b).sum::<f64>() / total;
    let spread = m.means().iter().map(|y| (y - centre).abs()).fold(0.0, f64::max);
    let bound = 2.0_f64.min((p.gamma() * total).sqrt()) * p.lambda() / total;
    if spread < bound {
        return Ok(vec![centre; m.len()]);
    }
    Ok(solve_exact(m, p)?.theta)
}

struct State<'a> {
    prob: &'a Problem<'a>,
    pen: Penalty,
    coef: Coefficients,
    resid: Vec<f64>,
    block_pen: Vec<f64>,
    n: f64,
    /// Largest coefficient change during the current sweep.
    movement: f64,
}

impl<'a> State<'a> {
    fn new(prob: &'a Problem<'a>, pen: Penalty, coef: Coefficients) -> Result<Self> {
        let d = prob.design;
        let block_pen = (0..d.n_vars())
            .map(|j| block_penalty(d, &coef.theta[j], j, &pen))
            .collect::<Result<Vec<_>>>()?;
        let mut s = Self { prob, pen, coef, resid: Vec::new(), block_pen, n: d.n() as f64, movement: 0.0 };
        s.refresh_residuals();
        Ok(s)
    }

    fn refresh_residuals(&mut self) {
        let eta = self.coef.linear_predictor(self.prob.design);
        self.resid = self.prob.target.iter().zip(eta).map(|(t, e)| t - e).collect();
    }

    fn loss(&self) -> f64 {
        let s: f64 = match self.prob.weights {
            None => self.resid.iter().map(|r| r * r).sum(),
            Some(w) => self.resid.iter().zip(w).map(|(r, w)| w * r * r).sum(),
        };
        s / (2.0 * self.n)
    }

    fn objective(&self) -> f64 {
        self.loss()
            + self.block_pen.iter().sum::<f64>()
            + self.pen.alpha * self.coef.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Weighted subaverages of the partial residual of block `j`.
    fn collapse(&self, j: usize) -> (Vec<f64>, Vec<f64>) {
        let var = &self.prob.design.vars()[j];
        let theta = &self.coef.theta[j];
        let k = var.n_levels();
        let mut sw = vec![0.0; k];
        let mut swr = vec![0.0; k];
        for (i, &c) in var.codes().iter().enumerate() {
            let w = self.prob.weight(i);
            sw[c] += w;
            swr[c] += w * (self.resid[i] + theta[c]);
        }
        let ybar = swr.iter().zip(&sw).map(|(a, b)| a / b).collect();
        let w = sw.iter().map(|s| s / self.n).collect();
        (w, ybar)
    }

    fn update_block(&mut self, j: usize) -> Result<()> {
        let design = self.prob.design;
        let var = &design.vars()[j];
        let (w, ybar) = self.collapse(j);
        let mut shift = 0.0;

        let new_theta = match design.hierarchy() {
            Some(h) if h.child == j => {
                let solved = h
                    .groups
                    .par_iter()
                    .map(|group| -> Result<Vec<f64>> {
                        if group.len() == 1 {
                            return Ok(vec![0.0]);
                        }
                        let gw: Vec<f64> = group.iter().map(|&l| w[l]).collect();
                        let total: f64 = gw.iter().sum();
                        let centre = group.iter().map(|&l| w[l] * ybar[l]).sum::<f64>() / total;
                        let gy = group.iter().map(|&l| ybar[l] - centre).collect();
                        let p = self.pen.block(self.pen.lambda_child, group.len())?;
                        let mut th = solve_block(&WeightedMeans::new(gw, gy)?, &p)?;
                        let counts = var.counts();
                        let mass: f64 = group.iter().map(|&l| counts[l] as f64).sum();
                        let c = group.iter().zip(&th).map(|(&l, t)| counts[l] as f64 * t).sum::<f64>() / mass;
                        th.iter_mut().for_each(|t| *t -= c);
                        Ok(th)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut theta = vec![0.0; var.n_levels()];
                for (group, th) in h.groups.iter().zip(solved) {
                    for (&l, t) in group.iter().zip(th) {
                        theta[l] = t;
                    }
                }
                theta
            }
            _ => {
                let p = self.pen.block(self.pen.lambda, var.n_levels())?;
                let mut theta = solve_block(&WeightedMeans::new(w, ybar)?, &p)?;
                let c = var
                    .counts()
                    .iter()
                    .zip(&theta)
                    .map(|(&n, t)| n as f64 * t)
                    .sum::<f64>()
                    / self.n;
                theta.iter_mut().for_each(|t| *t -= c);
                shift = c;
                theta
            }
        };

        let delta: Vec<f64> = new_theta
            .iter()
            .zip(&self.coef.theta[j])
            .map(|(a, b)| a - b + shift)
            .collect();
        for (r, &c) in self.resid.iter_mut().zip(var.codes()) {
            *r -= delta[c];
        }
        self.coef.mu += shift;
        self.block_pen[j] = block_penalty(design, &new_theta, j, &self.pen)?;
        let moved = new_theta
            .iter()
            .zip(&self.coef.theta[j])
            .map(|(a, b)| (a - b).abs())
            .fold(shift.abs(), f64::max);
        self.movement = self.movement.max(moved);
        self.coef.theta[j] = new_theta;
        Ok(())
    }

    fn update_beta(&mut self, l: usize) {
        let z = self.prob.design.z(l);
        let (mut num, mut den) = (0.0, 0.0);
        let old = self.coef.beta[l];
        for (i, (&zi, &r)) in z.iter().zip(&self.resid).enumerate() {
            let w = self.prob.weight(i);
            num += w * zi * (r + old * zi);
            den += w * zi * zi;
        }
        let (num, den) = (num / self.n, den / self.n);
        let new = if den > 0.0 {
            let soft = num.abs() - self.pen.alpha;
            if soft > 0.0 { num.signum() * soft / den } else { 0.0 }
        } else {
            0.0
        };
        let d = new - old;
        if d != 0.0 {
            for (r, zi) in self.resid.iter_mut().zip(z) {
                *r -= d * zi;
            }
        }
        self.movement = self.movement.max(d.abs());
        self.coef.beta[l] = new;
    }

    fn update_intercept(&mut self) {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, r) in self.resid.iter().enumerate() {
            let w = self.prob.weight(i);
            num += w * r;
            den += w;
        }
        let d = num / den;
        self.movement = self.movement.max(d.abs());
        self.coef.mu += d;
        self.resid.iter_mut().for_each(|r| *r -= d);
    }
}

/// Whether one pass of block updates from `init` leaves every categorical
/// block completely fused, i.e. whether a fully fused `init` is a fixed
/// point of the categorical updates.
pub(crate) fn blocks_stay_fused(prob: &Problem<'_>, pen: Penalty, init: Coefficients) -> Result<bool> {
    let mut st = State::new(prob, pen, init)?;
    for j in 0..prob.design.n_vars() {
        st.update_block(j)?;
        if !st.coef.is_fused(j) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Runs block coordinate descent from `init` until a sweep decreases the
/// objective by less than `cfg.bcd_tol` (relative) and moves no coefficient
/// by more than `COEF_TOL`.
pub(crate) fn run(prob: &Problem<'_>, pen: Penalty, init: Coefficients, cfg: &FitConfig) -> Result<FitResult> {
    let design = prob.design;
    let mut st = State::new(prob, pen, init)?;
    let mut q = st.objective();
    if !q.is_finite() {
        return Err(Error::NonFinite("objective at the initial point".into()));
    }
    let mut violations = 0;
    let mut check = |before: f64, after: f64| {
        if after > before + 1e-10 * before.abs() + 1e-15 {
            violations += 1;
            debug_assert!(false, "objective increased from {before} to {after}");
        }
    };

    let can_accelerate = design.hierarchy().is_none() && (pen.alpha == 0.0 || design.n_continuous() == 0);
    let lambdas = (0..design.n_vars())
        .map(|j| Ok(pen.block(pen.lambda, design.vars()[j].n_levels())?.lambda()))
        .collect::<Result<Vec<f64>>>()?;
    let mut prev_part: Option<Vec<Vec<usize>>> = None;
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < cfg.bcd_max_sweeps {
        sweeps += 1;
        st.movement = 0.0;
        st.refresh_residuals();
        let start = st.objective();
        let mut cur = start;
        for j in 0..design.n_vars() {
            st.update_block(j)?;
            let next = st.objective();
            check(cur, next);
            cur = next;
        }
        for l in 0..design.n_continuous() {
            st.update_beta(l);
            let next = st.objective();
            check(cur, next);
            cur = next;
        }
        if prob.update_intercept {
            st.update_intercept();
            let next = st.objective();
            check(cur, next);
            cur = next;
        }
        if !cur.is_finite() {
            return Err(Error::NonFinite(format!("objective after sweep {sweeps}")));
        }
        q = cur;
        let rel = (start - cur) / start.abs().max(f64::MIN_POSITIVE);
        if rel < cfg.bcd_tol && st.movement <= COEF_TOL {
            converged = true;
            break;
        }

        // With the level partition unchanged over a sweep, take a Newton
        // step on the problem restricted to that partition, halving it until
        // the objective goes down.
        if can_accelerate {
            let part: Vec<Vec<usize>> = (0..design.n_vars()).map(|j| st.coef.clusters(j)).collect();
            if prev_part.as_ref() == Some(&part) {
                if let Some(cand) = partition_newton(design, prob.target, prob.weights, &st.coef, pen.gamma, &lambdas) {
                    let mut t = 1.0;
                    for _ in 0..4 {
                        let trial = State::new(prob, pen, st.coef.lerp(&cand, t))?;
                        let v = trial.objective();
                        if v < q - 1e-12 * q.abs() {
                            st = trial;
                            q = v;
                            break;
                        }
                        t *= 0.5;
                    }
                }
            }
            prev_part = Some(part);
        }
    }

    Ok(FitResult { coef: st.coef, objective: q, sweeps, converged, descent_violations: violations })
}

/// Linear SCOPE fit at one `(gamma, lambda)` from `init`.
pub fn bcd_fit(
    design: &Design,
    y: &[f64],
    gamma: f64,
    lambda: f64,
    init: Coefficients,
    cfg: &FitConfig,
) -> Result<FitResult> {
    hierarchical_fit(design, y, gamma, lambda, lambda, init, cfg)
}

/// Linear fit with a separate level for the within-group gaps of the nested
/// variable (plain [`bcd_fit`] when the design has no hierarchy).
pub fn hierarchical_fit(
    design: &Design,
    y: &[f64],
    gamma: f64,
    lambda_parent: f64,
    lambda_child: f64,
    init: Coefficients,
    cfg: &FitConfig,
) -> Result<FitResult> {
    check_response(design, y)?;
    let prob = Problem { design, target: y, weights: None, update_intercept: false };
    let pen = Penalty { gamma, lambda: lambda_parent, lambda_child, alpha: cfg.alpha };
    run(&prob, pen, init, cfg)
}

pub(crate) fn check_response(design: &Design, y: &[f64]) -> Result<()> {
    if y.len() != design.n() {
        return Err(Error::invalid(format!("{} responses for {} rows", y.len(), design.n())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::coef::fit_intercept;
    use crate::univariate::collapse_to_subaverages;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> FitConfig {
        FitConfig::default()
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, ks: &[usize]) -> (Design, Vec<f64>) {
        let codes: Vec<Vec<usize>> = ks
            .iter()
            .map(|&k| {
                let mut c: Vec<usize> = (0..n).map(|i| i % k).collect();
                for i in k..n {
                    c[i] = rng.random_range(0..k);
                }
                c
            })
            .collect();
        let y = (0..n)
            .map(|i| {
                codes.iter().map(|c| (c[i] % 3) as f64 - 1.0).sum::<f64>() + rng.random_range(-1.0..1.0)
            })
            .collect();
        (Design::from_codes(codes).unwrap(), y)
    }

    #[test]
    fn single_block_matches_univariate_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (d, y) = random_data(&mut rng, 60, &[7]);
            let mu = fit_intercept(&y);
            let lambda = rng.random_range(0.0..0.5);
            let fit = bcd_fit(&d, &y, 8.0, lambda, Coefficients::zeros(&d, mu), &cfg()).unwrap();
            let centred: Vec<f64> = y.iter().map(|v| v - mu).collect();
            let m = collapse_to_subaverages(&centred, d.vars()[0].codes(), 7).unwrap();
            let p = McpParams::new(8.0, lambda * 7f64.sqrt()).unwrap();
            let direct = solve_exact(&m, &p).unwrap();
            for (a, b) in fit.coef.theta[0].iter().zip(&direct.theta) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            assert!((fit.coef.mu - mu).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_response_gives_zero_fit() {
        let d = Design::from_codes(vec![vec![0, 1, 2, 0, 1, 2], vec![0, 0, 1, 1, 0, 1]]).unwrap();
        let y = vec![2.5; 6];
        let fit = bcd_fit(&d, &y, 8.0, 0.1, Coefficients::zeros(&d, 2.5), &cfg()).unwrap();
        assert!(fit.coef.theta.iter().flatten().all(|&t| t == 0.0));
        assert!(fit.converged);
    }

    #[test]
    fn balanced_orthogonal_least_squares() {
        // every pair of levels appears equally often
        let (k1, k2, reps) = (3, 4, 2);
        let mut c1 = Vec::new();
        let mut c2 = Vec::new();
        for a in 0..k1 {
            for b in 0..k2 {
                for _ in 0..reps {
                    c1.push(a);
                    c2.push(b);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = c1.iter().zip(&c2).map(|(&a, &b)| a as f64 * 1.5 - (b as f64).powi(2) * 0.3 + rng.random_range(-1.0..1.0)).collect();
        let d = Design::from_codes(vec![c1.clone(), c2.clone()]).unwrap();
        let mu = fit_intercept(&y);
        let fit = bcd_fit(&d, &y, 8.0, 0.0, Coefficients::zeros(&d, mu), &cfg()).unwrap();
        for (j, codes) in [&c1, &c2].iter().enumerate() {
            let k = [k1, k2][j];
            for level in 0..k {
                let vals: Vec<f64> = y.iter().zip(codes.iter()).filter(|(_, &c)| c == level).map(|(v, _)| *v).collect();
                let expect = vals.iter().sum::<f64>() / vals.len() as f64 - mu;
                assert!((fit.coef.theta[j][level] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn monotone_identifiable_and_blockwise_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (d, y) = random_data(&mut rng, 120, &[5, 8, 3]);
            let mu = fit_intercept(&y);
            let lambda = rng.random_range(0.01..0.3);
            let pen = Penalty::new(8.0, lambda, 0.0);
            let fit = bcd_fit(&d, &y, 8.0, lambda, Coefficients::zeros(&d, mu), &cfg()).unwrap();
            assert_eq!(fit.descent_violations, 0);
            assert!(fit.converged);
            assert!(fit.coef.identifiability_defect(&d) < 1e-9 * d.n() as f64);
            assert!((fit.objective - objective(&d, &y, &fit.coef, &pen).unwrap()).abs() < 1e-10);

            // re-solving a block changes nothing
            let again = bcd_fit(&d, &y, 8.0, lambda, fit.coef.clone(), &FitConfig { bcd_max_sweeps: 1, ..cfg() }).unwrap();
            for (a, b) in again.coef.theta.iter().flatten().zip(fit.coef.theta.iter().flatten()) {
                assert!((a - b).abs() < 1e-7, "{a} {b} sweeps {} conv {}", fit.sweeps, fit.converged);
            }
        }
    }

    #[test]
    fn continuous_covariate_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let codes: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 0.7 * z[i] + rng.random_range(-0.1..0.1)).collect();
        let v = crate::fit::CategoricalVar::from_codes("x", codes, 2).unwrap();
        let d = Design::new(vec![v], vec![("z".into(), z.clone())]).unwrap();
        let fit = bcd_fit(&d, &y, 8.0, 10.0, Coefficients::zeros(&d, fit_intercept(&y)), &cfg()).unwrap();
        // categorical block fully fused, beta is the simple regression slope
        assert!(fit.coef.theta[0].iter().all(|t| t.abs() < 1e-12));
        let zm = z.iter().sum::<f64>() / n as f64;
        let ym = fit_intercept(&y);
        let sxy: f64 = z.iter().zip(&y).map(|(a, b)| (a - zm) * (b - ym)).sum();
        let sxx: f64 = z.iter().map(|a| (a - zm) * (a - zm)).sum();
        assert!((fit.coef.beta[0] - sxy / sxx).abs() < 1e-9);
    }

    #[test]
    fn hierarchical_singletons_and_separability() {
        // parent 0 has children {0,1}, parent 1 has child {2}
        let parent = vec![0, 0, 0, 0, 1, 1, 0, 0];
        let child = vec![0, 0, 1, 1, 2, 2, 0, 1];
        let d = Design::from_codes(vec![parent.clone(), child.clone()]).unwrap().with_hierarchy(0, 1).unwrap();
        let y = vec![1.0, 1.2, 3.0, 3.1, -2.0, -2.2, 0.9, 3.3];
        let mu = fit_intercept(&y);
        let fit = hierarchical_fit(&d, &y, 8.0, 0.05, 0.05, Coefficients::zeros(&d, mu), &cfg()).unwrap();
        assert_eq!(fit.coef.theta[1][2], 0.0);
        let counts = d.vars()[1].counts();
        let within = counts[0] as f64 * fit.coef.theta[1][0] + counts[1] as f64 * fit.coef.theta[1][1];
        assert!(within.abs() < 1e-9);
        assert_eq!(fit.descent_violations, 0);

        let fused = hierarchical_fit(&d, &y, 8.0, 0.05, 1e6, Coefficients::zeros(&d, mu), &cfg()).unwrap();
        assert!(fused.coef.theta[1].iter().all(|&t| t == 0.0));
    }
}
