//! Global minimisation of the univariate objective
//!
//! `Q(theta) = 1/2 * sum_k w_k (ybar_k - theta_k)^2 + sum_k rho(theta_(k+1) - theta_(k))`
//!
//! where `theta_(k)` are the order statistics of `theta`. Since the minimiser
//! preserves the order of the subaverages, sorting the levels by `ybar` turns
//! the problem into a chain, which [`solve_exact`] solves with a dynamic
//! program over piecewise quadratics and [`solve_discrete`] solves on a fixed
//! grid.

use crate::error::{Error, Result};
use crate::penalty::McpParams;
use crate::pwq::{self, PiecewiseLinear, PiecewiseQuadratic};

/// Absolute tolerance used to group fitted values into clusters.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Points in the grid used by [`solve_discrete`] when none is supplied.
pub const DEFAULT_GRID_LEN: usize = 256;

/// Per-level weights and subaverages of one categorical variable.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMeans {
    w: Vec<f64>,
    ybar: Vec<f64>,
    labels: Vec<usize>,
}

impl WeightedMeans {
    /// Levels are labelled `0..K` in the given order.
    pub fn new(w: Vec<f64>, ybar: Vec<f64>) -> Result<Self> {
        let labels = (0..w.len()).collect();
        Self::with_labels(w, ybar, labels)
    }

    pub fn with_labels(w: Vec<f64>, ybar: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("at least one level is required"));
        }
        if w.len() != ybar.len() || w.len() != labels.len() {
            return Err(Error::invalid(format!(
                "length mismatch: {} weights, {} subaverages, {} labels",
                w.len(),
                ybar.len(),
                labels.len()
            )));
        }
        if let Some(k) = w.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::invalid(format!("weight of level {k} must be positive, got {}", w[k])));
        }
        if let Some(k) = ybar.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("subaverage of level {k}")));
        }
        let total: f64 = w.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total} > 1")));
        }
        Ok(Self { w, ybar, labels })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn means(&self) -> &[f64] {
        &self.ybar
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Level indices sorted by subaverage, ties kept in index order.
    pub fn sorted_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&i, &j| self.ybar[i].total_cmp(&self.ybar[j]));
        order
    }
}

/// Weights `n_k/n` and level means of `y` grouped by `x` (levels `0..k`).
pub fn collapse_to_subaverages(y: &[f64], x: &[usize], k: usize) -> Result<WeightedMeans> {
    if y.len() != x.len() {
        return Err(Error::invalid(format!("{} responses but {} levels", y.len(), x.len())));
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&yi, &xi) in y.iter().zip(x) {
        if xi >= k {
            return Err(Error::invalid(format!("level index {xi} out of range 0..{k}")));
        }
        sums[xi] += yi;
        counts[xi] += 1;
    }
    if let Some(level) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyLevel { variable: "0".into(), level: level.to_string() });
    }
    let n = y.len() as f64;
    let w = counts.iter().map(|&c| c as f64 / n).collect();
    let ybar = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    WeightedMeans::new(w, ybar)
}

/// Objective value at `theta`, coefficients in level order.
pub fn objective_value(theta: &[f64], m: &WeightedMeans, p: &McpParams) -> f64 {
    debug_assert_eq!(theta.len(), m.len());
    let loss: f64 = theta
        .iter()
        .zip(&m.w)
        .zip(&m.ybar)
        .map(|((t, w), y)| 0.5 * w * (y - t) * (y - t))
        .sum();
    let mut sorted = theta.to_vec();
    sorted.sort_by(f64::total_cmp);
    let penalty: f64 = sorted.windows(2).map(|s| p.eval(s[1] - s[0])).sum();
    loss + penalty
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateSolution {
    /// Fitted values in the original level order.
    pub theta: Vec<f64>,
    pub objective: f64,
    /// Cluster id per level, ids increasing with the cluster value.
    pub clusters: Vec<usize>,
    /// Number of pieces of `f_k` at every DP stage (empty for the grid solver).
    pub piece_counts: Vec<usize>,
}

impl UnivariateSolution {
    pub fn n_clusters(&self) -> usize {
        self.clusters.iter().max().map_or(0, |&c| c + 1)
    }

    fn from_theta(theta: Vec<f64>, m: &WeightedMeans, p: &McpParams, piece_counts: Vec<usize>) -> Self {
        let objective = objective_value(&theta, m, p);
        let clusters = cluster_ids(&theta, CLUSTER_TOL);
        Self { theta, objective, clusters, piece_counts }
    }
}

/// Exact global minimiser via the piecewise-quadratic dynamic program.
pub fn solve_exact(m: &WeightedMeans, p: &McpParams) -> Result<UnivariateSolution> {
    let order = m.sorted_order();
    let k = order.len();
    let (w0, y0) = (m.w[order[0]], m.ybar[order[0]]);
    let mut f = PiecewiseQuadratic::quadratic(0.5 * w0, -w0 * y0, 0.5 * w0 * y0 * y0);
    let mut backs: Vec<PiecewiseLinear> = Vec::with_capacity(k - 1);
    let mut piece_counts = Vec::with_capacity(k);
    piece_counts.push(f.len());

    for &level in &order[1..] {
        let cands = pwq::candidates_from(&f, p);
        let (g, back) = pwq::lower_envelope(&cands)?;
        f = pwq::add_quadratic(&g, m.w[level], m.ybar[level])?;
        backs.push(back);
        piece_counts.push(f.len());
    }

    let (last, _) = pwq::global_minimize(&f)?;
    let mut sorted_theta = vec![0.0; k];
    sorted_theta[k - 1] = last;
    for i in (0..k - 1).rev() {
        let next = sorted_theta[i + 1];
        // float noise in the backpointer must not break the ordering
        sorted_theta[i] = backs[i].evaluate(next).min(next);
    }

    let mut theta = vec![0.0; k];
    for (pos, &level) in order.iter().enumerate() {
        theta[level] = sorted_theta[pos];
    }
    Ok(UnivariateSolution::from_theta(theta, m, p, piece_counts))
}

/// Equispaced grid over `[min ybar, max ybar]`.
pub fn default_grid(m: &WeightedMeans, len: usize) -> Vec<f64> {
    let lo = m.ybar.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.ybar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi || len < 2 {
        return vec![lo];
    }
    let h = (hi - lo) / (len - 1) as f64;
    (0..len)
        .map(|i| if i == len - 1 { hi } else { lo + i as f64 * h })
        .collect()
}

/// Minimiser restricted to `theta_k` in `grid`, by tabulation over the grid.
pub fn solve_discrete(m: &WeightedMeans, p: &McpParams, grid: &[f64]) -> Result<UnivariateSolution> {
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    if grid.windows(2).any(|g| !(g[0] < g[1])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("grid must be finite and strictly increasing"));
    }
    let order = m.sorted_order();
    let l = grid.len();
    let loss = |level: usize, j: usize| {
        let r = m.ybar[level] - grid[j];
        0.5 * m.w[level] * r * r
    };

    let mut cost: Vec<f64> = (0..l).map(|j| loss(order[0], j)).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(order.len() - 1);
    for &level in &order[1..] {
        let mut next = vec![0.0; l];
        let mut arg = vec![0usize; l];
        for j in 0..l {
            let mut best = f64::INFINITY;
            let mut best_i = 0;
            for i in 0..=j {
                let v = cost[i] + p.eval(grid[j] - grid[i]);
                if v < best {
                    best = v;
                    best_i = i;
                }
            }
            next[j] = best + loss(level, j);
            arg[j] = best_i;
        }
        cost = next;
        back.push(arg);
    }

    let mut idx = 0;
    for j in 1..l {
        if cost[j] < cost[idx] {
            idx = j;
        }
    }
    let k = order.len();
    let mut theta = vec![0.0; k];
    theta[order[k - 1]] = grid[idx];
    for pos in (0..k - 1).rev() {
        idx = back[pos][idx];
        theta[order[pos]] = grid[idx];
    }
    Ok(UnivariateSolution::from_theta(theta, m, p, Vec::new()))
}

/// Groups values that differ by at most `tol` (chained in sorted order).
/// Ids increase with the value of the cluster.
pub fn cluster_ids(theta: &[f64], tol: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&i, &j| theta[i].total_cmp(&theta[j]));
    let mut ids = vec![0; theta.len()];
    let mut current = 0;
    for w in 0..order.len() {
        if w > 0 && theta[order[w]] - theta[order[w - 1]] > tol {
            current += 1;
        }
        ids[order[w]] = current;
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(gamma: f64, lambda: f64) -> McpParams {
        McpParams::new(gamma, lambda).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> WeightedMeans {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w = raw.iter().map(|r| r / total).collect();
        let ybar = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        WeightedMeans::new(w, ybar).unwrap()
    }

    /// Exhaustive search over nondecreasing assignments (in ybar order) of grid values.
    fn monotone_grid_min(m: &WeightedMeans, p: &McpParams, grid: &[f64]) -> f64 {
        fn rec(
            pos: usize,
            start: usize,
            order: &[usize],
            grid: &[f64],
            theta: &mut Vec<f64>,
            m: &WeightedMeans,
            p: &McpParams,
            best: &mut f64,
        ) {
            if pos == order.len() {
                *best = best.min(objective_value(theta, m, p));
                return;
            }
            for j in start..grid.len() {
                theta[order[pos]] = grid[j];
                rec(pos + 1, j, order, grid, theta, m, p, best);
            }
        }
        let order = m.sorted_order();
        let mut theta = vec![0.0; m.len()];
        let mut best = f64::INFINITY;
        rec(0, 0, &order, grid, &mut theta, m, p, &mut best);
        best
    }

    /// Pattern search from `start`; each accepted move strictly decreases Q.
    fn local_descent(start: &[f64], m: &WeightedMeans, p: &McpParams) -> f64 {
        let mut theta = start.to_vec();
        let mut value = objective_value(&theta, m, p);
        let mut step = 1.0;
        let mut sweeps = 0;
        while step > 1e-9 && sweeps < 2000 {
            sweeps += 1;
            let mut improved = false;
            for k in 0..theta.len() {
                for dir in [-1.0, 1.0] {
                    let old = theta[k];
                    theta[k] = old + dir * step;
                    let v = objective_value(&theta, m, p);
                    if v < value {
                        value = v;
                        improved = true;
                    } else {
                        theta[k] = old;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        value
    }

    #[test]
    fn collapse_examples() {
        let m = collapse_to_subaverages(&[1.0, 3.0], &[0, 1], 2).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert_eq!(m.means(), &[1.0, 3.0]);

        let m = collapse_to_subaverages(&[2.0, 2.0, 2.0], &[0, 0, 1], 2).unwrap();
        assert!((m.weights()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.means(), &[2.0, 2.0]);

        assert!(matches!(
            collapse_to_subaverages(&[1.0], &[0], 2),
            Err(Error::EmptyLevel { level, .. }) if level == "1"
        ));
    }

    #[test]
    fn collapse_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let k = rng.random_range(1..8);
            let n = rng.random_range(k..60);
            let mut x: Vec<usize> = (0..k).collect();
            x.extend((k..n).map(|_| rng.random_range(0..k)));
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let m = collapse_to_subaverages(&y, &x, k).unwrap();
            let lhs: f64 = m.weights().iter().zip(m.means()).map(|(w, y)| w * y).sum();
            let mean = y.iter().sum::<f64>() / n as f64;
            assert!((lhs - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_examples() {
        let m = WeightedMeans::new(vec![0.25, 0.25, 0.5], vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(objective_value(m.means(), &m, &params(8.0, 0.0)), 0.0);
        let c = 0.3;
        let expect: f64 = m.weights().iter().zip(m.means()).map(|(w, y)| 0.5 * w * (y - c) * (y - c)).sum();
        assert!((objective_value(&[c; 3], &m, &params(8.0, 1.0)) - expect).abs() < 1e-15);
    }

    #[test]
    fn objective_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let k = rng.random_range(2..7);
            let m = random_instance(&mut rng, k);
            let theta: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = params(4.0, rng.random_range(0.0..2.0));
            let mut perm: Vec<usize> = (0..k).collect();
            perm.reverse();
            perm.rotate_left(rng.random_range(0..k));
            let pm = WeightedMeans::new(
                perm.iter().map(|&i| m.weights()[i]).collect(),
                perm.iter().map(|&i| m.means()[i]).collect(),
            )
            .unwrap();
            let pt: Vec<f64> = perm.iter().map(|&i| theta[i]).collect();
            let a = objective_value(&theta, &m, &p);
            let b = objective_value(&pt, &pm, &p);
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
    }

    #[test]
    fn solve_exact_trivial_cases() {
        let m = WeightedMeans::new(vec![0.2, 0.3, 0.5], vec![1.0, -2.0, 0.5]).unwrap();
        let s = solve_exact(&m, &params(8.0, 0.0)).unwrap();
        for (t, y) in s.theta.iter().zip(m.means()) {
            assert!((t - y).abs() < 1e-12);
        }

        let m = WeightedMeans::new(vec![0.2, 0.3, 0.5], vec![1.5; 3]).unwrap();
        let s = solve_exact(&m, &params(8.0, 0.7)).unwrap();
        assert!(s.theta.iter().all(|&t| (t - 1.5).abs() < 1e-12));
        assert_eq!(s.n_clusters(), 1);
    }

    #[test]
    fn solve_exact_two_saturated_levels() {
        let m = WeightedMeans::new(vec![0.5, 0.5], vec![-3.0, 3.0]).unwrap();
        let p = params(8.0, 0.5);
        let s = solve_exact(&m, &p).unwrap();
        assert!((s.theta[0] + 3.0).abs() < 1e-12 && (s.theta[1] - 3.0).abs() < 1e-12);

        // dense monotone grid oracle, 2001 points per coordinate
        let grid: Vec<f64> = (0..2001).map(|i| -5.0 + 10.0 * i as f64 / 2000.0).collect();
        let oracle = monotone_grid_min(&m, &p, &grid);
        assert!(s.objective <= oracle + 1e-12);
        assert!((s.objective - oracle).abs() < 1e-9);
    }

    #[test]
    fn solve_exact_null_example() {
        let third = 1.0 / 3.0;
        let m = WeightedMeans::new(vec![third; 3], vec![-0.3, 0.0, 0.3]).unwrap();
        let p = params(8.0, 0.5);
        let s = solve_exact(&m, &p).unwrap();
        assert!(s.theta.iter().all(|t| t.abs() < 1e-12), "{:?}", s.theta);
        let grid: Vec<f64> = (0..201).map(|i| -1.0 + i as f64 / 100.0).collect();
        assert!(s.objective <= monotone_grid_min(&m, &p, &grid) + 1e-12);
    }

    #[test]
    fn solve_exact_beats_grid_and_local_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..200 {
            let k = rng.random_range(2..=5);
            let m = random_instance(&mut rng, k);
            let gamma = [1.5, 4.0, 8.0, 32.0][rng.random_range(0..4)];
            let p = params(gamma, rng.random_range(0.0..2.0));
            let s = solve_exact(&m, &p).unwrap();
            assert!((s.objective - objective_value(&s.theta, &m, &p)).abs() < 1e-12);

            let lo = m.means().iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = m.means().iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let points = if k <= 3 { 201 } else { 41 };
            let grid: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
            let oracle = monotone_grid_min(&m, &p, &grid);
            assert!(s.objective <= oracle + 1e-9, "trial {trial}: {} > grid {oracle}", s.objective);

            for _ in 0..50 {
                let start: Vec<f64> = s.theta.iter().map(|t| t + rng.random_range(-1.0..1.0)).collect();
                let v = local_descent(&start, &m, &p);
                assert!(s.objective <= v + 1e-9, "trial {trial}: local search found {v} < {}", s.objective);
            }
        }
    }

    #[test]
    fn order_and_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let k = rng.random_range(2..12);
            let m = random_instance(&mut rng, k);
            let p = params(8.0, rng.random_range(0.0..1.5));
            let s = solve_exact(&m, &p).unwrap();
            for i in 0..k {
                for j in 0..k {
                    if m.means()[i] > m.means()[j] {
                        assert!(s.theta[i] >= s.theta[j]);
                    }
                }
            }

            let c = rng.random_range(-4.0..4.0);
            let shifted = WeightedMeans::new(m.weights().to_vec(), m.means().iter().map(|y| y + c).collect()).unwrap();
            let t = solve_exact(&shifted, &p).unwrap();
            for (a, b) in s.theta.iter().zip(&t.theta) {
                assert!((a + c - b).abs() < 1e-9);
            }

            let scale = rng.random_range(0.2..5.0);
            let scaled = WeightedMeans::new(m.weights().to_vec(), m.means().iter().map(|y| y * scale).collect()).unwrap();
            let u = solve_exact(&scaled, &p.scaled_lambda(scale).unwrap()).unwrap();
            for (a, b) in s.theta.iter().zip(&u.theta) {
                assert!((a * scale - b).abs() <= 1e-8 * (a * scale).abs().max(1.0));
            }

            // fused values are bit-identical
            assert_eq!(cluster_ids(&s.theta, 0.0), s.clusters);
        }
    }

    #[test]
    fn duplicate_split_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.random_range(2..8);
            let m = random_instance(&mut rng, k);
            let p = params(8.0, rng.random_range(0.0..1.0));
            let s = solve_exact(&m, &p).unwrap();
            let d = rng.random_range(0..k);
            let mut w = m.weights().to_vec();
            let mut y = m.means().to_vec();
            w[d] *= 0.5;
            w.push(w[d]);
            y.push(y[d]);
            let t = solve_exact(&WeightedMeans::new(w, y).unwrap(), &p).unwrap();
            for i in 0..k {
                assert!((s.theta[i] - t.theta[i]).abs() < 1e-8);
            }
            assert!((t.theta[k] - s.theta[d]).abs() < 1e-8);
        }
    }

    #[test]
    fn discrete_examples() {
        let m = WeightedMeans::new(vec![0.5, 0.5], vec![-1.0, 2.0]).unwrap();
        let p = params(8.0, 0.3);
        let s = solve_discrete(&m, &p, &[0.7]).unwrap();
        assert_eq!(s.theta, vec![0.7, 0.7]);
        assert!(solve_discrete(&m, &p, &[]).is_err());

        let s = solve_discrete(&m, &params(8.0, 0.0), &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(s.theta, vec![-1.0, 2.0]);
    }

    #[test]
    fn discrete_matches_exact_on_augmented_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..50 {
            let k = rng.random_range(2..=6);
            let m = random_instance(&mut rng, k);
            let p = params([4.0, 8.0, 32.0][rng.random_range(0..3)], rng.random_range(0.0..1.5));
            let exact = solve_exact(&m, &p).unwrap();
            let mut grid = exact.theta.clone();
            grid.extend((0..64).map(|i| -4.0 + 8.0 * i as f64 / 63.0));
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let disc = solve_discrete(&m, &p, &grid).unwrap();
            assert!((disc.objective - exact.objective).abs() < 1e-8);
        }
    }

    #[test]
    fn default_grid_spans_range() {
        let m = WeightedMeans::new(vec![0.5, 0.5], vec![-1.0, 3.0]).unwrap();
        let g = default_grid(&m, DEFAULT_GRID_LEN);
        assert_eq!(g.len(), 256);
        assert_eq!((g[0], g[255]), (-1.0, 3.0));
        let m = WeightedMeans::new(vec![1.0], vec![2.0]).unwrap();
        assert_eq!(default_grid(&m, 256), vec![2.0]);
    }

    #[test]
    fn cluster_id_examples() {
        assert_eq!(cluster_ids(&[1.0, 1.0, 2.0], 1e-8), vec![0, 0, 1]);
        assert_eq!(cluster_ids(&[3.0, -1.0, 3.0, 0.0], 1e-8), vec![2, 0, 2, 1]);
        assert_eq!(cluster_ids(&[5.0; 4], 1e-8), vec![0; 4]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(WeightedMeans::new(vec![], vec![]).is_err());
        assert!(WeightedMeans::new(vec![0.5], vec![f64::NAN]).is_err());
        assert!(WeightedMeans::new(vec![0.0], vec![1.0]).is_err());
        assert!(WeightedMeans::new(vec![0.7, 0.7], vec![1.0, 2.0]).is_err());
    }
}
