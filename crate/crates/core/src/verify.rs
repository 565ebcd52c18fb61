//! Independent checks: exhaustive grid minimisation, the oracle least-squares
//! estimate that knows the true level groupings, and the signal-separation
//! conditions under which the penalised fit recovers it.

use crate::error::{Error, Result};
use crate::fit::{grouped_least_squares, Coefficients, Design};
use crate::penalty::McpParams;
use crate::univariate::{objective_value, WeightedMeans};

/// Largest number of levels [`grid_oracle`] accepts.
pub const GRID_ORACLE_MAX_LEVELS: usize = 5;

/// Minimises the univariate objective over all assignments of the levels to
/// an equispaced grid over `[min ybar - pad, max ybar + pad]` that are
/// nondecreasing in the order of the subaverages. Plain depth-first
/// enumeration, pruned by a lower bound on the remaining loss.
pub fn grid_oracle(m: &WeightedMeans, p: &McpParams, grid_points: usize, pad: f64) -> Result<(Vec<f64>, f64)> {
    let k = m.len();
    if k > GRID_ORACLE_MAX_LEVELS {
        return Err(Error::invalid(format!("grid oracle supports at most {GRID_ORACLE_MAX_LEVELS} levels, got {k}")));
    }
    if grid_points < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    let lo = m.means().iter().copied().fold(f64::INFINITY, f64::min) - pad;
    let hi = m.means().iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad;
    let grid: Vec<f64> = (0..grid_points)
        .map(|i| lo + (hi - lo) * i as f64 / (grid_points - 1) as f64)
        .collect();

    let order = m.sorted_order();
    let w: Vec<f64> = order.iter().map(|&i| m.weights()[i]).collect();
    let y: Vec<f64> = order.iter().map(|&i| m.means()[i]).collect();
    let loss = |pos: usize, t: f64| 0.5 * w[pos] * (y[pos] - t) * (y[pos] - t);
    // lower bound on the loss of levels pos.. given they all sit at or above t
    let tail_bound = |pos: usize, t: f64| -> f64 {
        (pos..k).map(|q| { let d = (t - y[q]).max(0.0); 0.5 * w[q] * d * d }).sum()
    };

    let nearest = |v: f64| -> usize { ((((v - lo) / (hi - lo)) * (grid_points - 1) as f64).round() as usize).min(grid_points - 1) };
    let value_of = |idx: &[usize]| -> f64 {
        let mut v: f64 = idx.iter().enumerate().map(|(q, &j)| loss(q, grid[j])).sum();
        v += idx.windows(2).map(|s| p.eval(grid[s[1]] - grid[s[0]])).sum::<f64>();
        v
    };
    // starting incumbent: the best contiguous grouping of the sorted levels,
    // every group at the grid point nearest its weighted mean
    let mut best_idx = Vec::new();
    let mut best = f64::INFINITY;
    for cuts in 0u32..(1 << (k - 1)) {
        let mut idx = vec![0; k];
        let mut start = 0;
        for end in 1..=k {
            if end == k || cuts & (1 << (end - 1)) != 0 {
                let mass: f64 = w[start..end].iter().sum();
                let mean = (start..end).map(|q| w[q] * y[q]).sum::<f64>() / mass;
                idx[start..end].fill(nearest(mean));
                start = end;
            }
        }
        let v = value_of(&idx);
        if v < best {
            best = v;
            best_idx = idx;
        }
    }

    struct Search<'a> {
        grid: &'a [f64],
        k: usize,
        current: Vec<usize>,
        best: f64,
        best_idx: Vec<usize>,
    }
    fn descend(
        s: &mut Search<'_>,
        pos: usize,
        partial: f64,
        loss: &dyn Fn(usize, f64) -> f64,
        tail: &dyn Fn(usize, f64) -> f64,
        p: &McpParams,
        y: &[f64],
    ) {
        if pos == s.k {
            if partial < s.best {
                s.best = partial;
                s.best_idx = s.current.clone();
            }
            return;
        }
        let start = if pos == 0 { 0 } else { s.current[pos - 1] };
        for j in start..s.grid.len() {
            let t = s.grid[j];
            let gap = if pos == 0 { 0.0 } else { p.eval(t - s.grid[s.current[pos - 1]]) };
            let value = partial + gap + loss(pos, t);
            let bound = value + tail(pos + 1, t);
            if bound >= s.best {
                // every term of the bound grows with t once t passes y[pos]
                if t >= y[pos] {
                    break;
                }
                continue;
            }
            s.current[pos] = j;
            descend(s, pos + 1, value, loss, tail, p, y);
        }
    }

    let mut search = Search { grid: &grid, k, current: vec![0; k], best, best_idx: best_idx.clone() };
    descend(&mut search, 0, 0.0, &loss, &tail_bound, p, &y);
    best = search.best;
    best_idx = search.best_idx;

    let mut theta = vec![0.0; k];
    for (pos, &level) in order.iter().enumerate() {
        theta[level] = grid[best_idx[pos]];
    }
    debug_assert!((objective_value(&theta, m, p) - best).abs() <= 1e-9 * best.abs().max(1.0));
    Ok((theta, best))
}

/// True grouping and coefficients of every categorical variable.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSpec {
    /// Group id of every level, per variable.
    pub groups: Vec<Vec<usize>>,
    pub theta0: Vec<Vec<f64>>,
}

impl OracleSpec {
    /// Groups are the sets of levels with equal true coefficients.
    pub fn from_theta(theta0: Vec<Vec<f64>>) -> Self {
        let groups = theta0.iter().map(|t| crate::univariate::cluster_ids(t, 0.0)).collect();
        Self { groups, theta0 }
    }

    pub fn n_groups(&self, j: usize) -> usize {
        self.groups[j].iter().max().map_or(0, |m| m + 1)
    }

    fn validate(&self, design: &Design) -> Result<()> {
        if self.groups.len() != design.n_vars() || self.theta0.len() != design.n_vars() {
            return Err(Error::invalid("oracle spec does not match the number of variables"));
        }
        for (j, (g, t)) in self.groups.iter().zip(&self.theta0).enumerate() {
            let k = design.vars()[j].n_levels();
            if g.len() != k || t.len() != k {
                return Err(Error::invalid(format!("oracle spec for variable {j} has the wrong number of levels")));
            }
        }
        Ok(())
    }
}

/// Least squares over coefficients constant on the true groups, subject to
/// `sum_k n_jk theta_jk = 0`.
pub fn oracle_least_squares(design: &Design, y: &[f64], spec: &OracleSpec) -> Result<Coefficients> {
    spec.validate(design)?;
    grouped_least_squares(design, y, None, &spec.groups)
}

/// Separation quantities of one variable.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableSeparation {
    /// Smallest nonzero gap between true coefficients (`inf` if all equal).
    pub delta: f64,
    pub s: usize,
    pub k: usize,
    pub n0_min: usize,
    pub n0_max: usize,
    pub n_min: usize,
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    /// Effective penalty level `lambda * sqrt(K_j)`.
    pub lambda_j: f64,
    /// Right-hand side of the univariate (global optimum) condition.
    pub bound_global: f64,
    /// Right-hand side of the multivariate (blockwise optimum) condition.
    pub bound_blockwise: f64,
    pub satisfied_global: bool,
    pub satisfied_blockwise: bool,
    /// Univariate tail bound with `n_min` the smallest level count.
    pub prob_global_nmin: f64,
    /// Univariate tail bound with `n_min = n / K`.
    pub prob_global_balanced: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationReport {
    pub eta: f64,
    pub variables: Vec<VariableSeparation>,
    /// Blockwise-optimum probability bound summed over variables (raw, may
    /// be negative).
    pub prob_blockwise: f64,
}

impl SeparationReport {
    pub fn satisfied_global(&self) -> bool {
        self.variables.iter().all(|v| v.satisfied_global)
    }

    pub fn satisfied_blockwise(&self) -> bool {
        self.variables.iter().all(|v| v.satisfied_blockwise)
    }
}

/// Smallest nonzero pairwise gap.
pub fn min_gap(theta: &[f64]) -> f64 {
    let mut v = theta.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min)
}

pub fn check_separation(spec: &OracleSpec, design: &Design, gamma: f64, lambda: f64, sigma: f64) -> Result<SeparationReport> {
    spec.validate(design)?;
    let n = design.n() as f64;

    let mut eta: f64 = 1.0;
    let mut stats = Vec::new();
    for (j, v) in design.vars().iter().enumerate() {
        let s = spec.n_groups(j);
        let mut mass = vec![0usize; s];
        for (&g, &c) in spec.groups[j].iter().zip(v.counts()) {
            mass[g] += c;
        }
        let n0_min = *mass.iter().min().unwrap_or(&0);
        let n0_max = *mass.iter().max().unwrap_or(&0);
        let sf = s as f64;
        eta = eta.min(sf * n0_min as f64 / n).min(n / (sf * n0_max as f64));
        stats.push((s, n0_min, n0_max));
    }
    let eta = eta.clamp(f64::MIN_POSITIVE, 1.0);

    let mut variables = Vec::new();
    let mut blockwise_sum = 0.0;
    for (j, v) in design.vars().iter().enumerate() {
        let (s, n0_min, n0_max) = stats[j];
        let k = v.n_levels();
        let sf = s as f64;
        let lambda_j = lambda * (k as f64).sqrt();
        let gamma_lower = gamma.min(eta * sf);
        let gamma_upper = gamma.max(eta * sf);
        let root = (gamma * gamma_upper).sqrt() * lambda_j;
        let bound_global = 3.0 * (1.0 + 2f64.sqrt() / eta) * root;
        let bound_blockwise = 3.0 * (4.0 / 3.0 + 2f64.sqrt() / eta) * root;
        let delta = min_gap(&spec.theta0[j]);
        let n_min = *v.counts().iter().min().unwrap_or(&0);
        let exponent = |count: f64| -count * eta * sf * gamma_lower * lambda_j * lambda_j / (8.0 * sigma * sigma) + (k as f64).ln();
        blockwise_sum += exponent(n_min as f64).exp();
        variables.push(VariableSeparation {
            delta,
            s,
            k,
            n0_min,
            n0_max,
            n_min,
            gamma_lower,
            gamma_upper,
            lambda_j,
            bound_global,
            bound_blockwise,
            satisfied_global: delta >= bound_global,
            satisfied_blockwise: delta >= bound_blockwise,
            prob_global_nmin: 1.0 - 2.0 * exponent(n_min as f64).exp(),
            prob_global_balanced: 1.0 - 2.0 * exponent(n / k as f64).exp(),
        });
    }
    Ok(SeparationReport { eta, variables, prob_blockwise: 1.0 - 4.0 * blockwise_sum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::univariate::{solve_discrete, solve_exact};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_means(rng: &mut ChaCha8Rng, k: usize) -> WeightedMeans {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        WeightedMeans::new(raw.iter().map(|r| r / total).collect(), (0..k).map(|_| rng.random_range(-3.0..3.0)).collect())
            .unwrap()
    }

    #[test]
    fn grid_oracle_trivial_cases() {
        let m = WeightedMeans::new(vec![0.5, 0.5], vec![-1.0, 1.0]).unwrap();
        let (theta, v) = grid_oracle(&m, &McpParams::new(8.0, 0.0).unwrap(), 201, 1.0).unwrap();
        assert_eq!(theta, vec![-1.0, 1.0]);
        assert_eq!(v, 0.0);

        let m = WeightedMeans::new(vec![0.25; 4], vec![0.7; 4]).unwrap();
        let (theta, _) = grid_oracle(&m, &McpParams::new(8.0, 0.3).unwrap(), 201, 1.0).unwrap();
        assert!(theta.iter().all(|&t| t == theta[0]));

        let m = WeightedMeans::new(vec![0.1; 6], vec![0.0; 6]).unwrap();
        assert!(grid_oracle(&m, &McpParams::new(8.0, 0.3).unwrap(), 201, 1.0).is_err());
    }

    #[test]
    fn grid_oracle_agrees_with_grid_dp() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let k = rng.random_range(2..=4);
            let m = random_means(&mut rng, k);
            let p = McpParams::new([1.5, 4.0, 8.0, 32.0][rng.random_range(0..4)], rng.random_range(0.0..2.0)).unwrap();
            let (_, v) = grid_oracle(&m, &p, 81, 1.0).unwrap();
            let lo = m.means().iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = m.means().iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let grid: Vec<f64> = (0..81).map(|i| lo + (hi - lo) * i as f64 / 80.0).collect();
            let d = solve_discrete(&m, &p, &grid).unwrap();
            assert!((d.objective - v).abs() < 1e-9, "{} vs {v}", d.objective);
            let e = solve_exact(&m, &p).unwrap();
            assert!(e.objective <= v + 1e-9);
        }
    }

    #[test]
    fn oracle_lse_univariate() {
        // singletons, no noise: centred subaverages
        let codes = vec![0, 1, 2, 0, 1, 2];
        let y = vec![1.0, 2.0, 6.0, 1.0, 2.0, 6.0];
        let d = Design::from_codes(vec![codes.clone()]).unwrap();
        let spec = OracleSpec { groups: vec![vec![0, 1, 2]], theta0: vec![vec![0.0, 1.0, 2.0]] };
        let c = oracle_least_squares(&d, &y, &spec).unwrap();
        assert!((c.mu - 3.0).abs() < 1e-12);
        for (a, b) in c.theta[0].iter().zip([-2.0, -1.0, 3.0]) {
            assert!((a - b).abs() < 1e-10);
        }

        // two groups {0,1} and {2}, balanced: weighted group means of centred ybar
        let spec = OracleSpec { groups: vec![vec![0, 0, 1]], theta0: vec![vec![0.0, 0.0, 1.0]] };
        let c = oracle_least_squares(&d, &y, &spec).unwrap();
        assert!((c.theta[0][0] + 1.5).abs() < 1e-10 && (c.theta[0][2] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn oracle_lse_interpolates_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let c1: Vec<usize> = (0..n).map(|i| i % 6).collect();
        let c2: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let d = Design::from_codes(vec![c1.clone(), c2.clone()]).unwrap();
        let mut theta0 = vec![vec![-1.0, -1.0, -1.0, 2.0, 2.0, 2.0], vec![0.5, 0.5, -1.5, -1.5]];
        // enforce identifiability of the truth
        for (j, v) in d.vars().iter().enumerate() {
            let c = v.counts().iter().zip(&theta0[j]).map(|(&n, t)| n as f64 * t).sum::<f64>() / n as f64;
            theta0[j].iter_mut().for_each(|t| *t -= c);
        }
        let spec = OracleSpec::from_theta(theta0.clone());
        let y: Vec<f64> = (0..n).map(|i| 4.0 + theta0[0][c1[i]] + theta0[1][c2[i]]).collect();
        let c = oracle_least_squares(&d, &y, &spec).unwrap();
        assert!((c.mu - 4.0).abs() < 1e-10);
        for (a, b) in c.theta.iter().flatten().zip(theta0.iter().flatten()) {
            assert!((a - b).abs() < 1e-10);
        }

        // noisy response: residuals orthogonal to every group indicator
        let y: Vec<f64> = y.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let c = oracle_least_squares(&d, &y, &spec).unwrap();
        let eta = c.linear_predictor(&d);
        let r: Vec<f64> = y.iter().zip(&eta).map(|(a, b)| a - b).collect();
        assert!(r.iter().sum::<f64>().abs() < 1e-8 * n as f64);
        for (j, codes) in [&c1, &c2].iter().enumerate() {
            for g in 0..spec.n_groups(j) {
                let s: f64 = (0..n).filter(|&i| spec.groups[j][codes[i]] == g).map(|i| r[i]).sum();
                assert!(s.abs() < 1e-8 * n as f64);
            }
        }
    }

    #[test]
    fn oracle_lse_rank_deficiency() {
        // two variables that coincide give collinear group columns
        let codes = vec![0, 1, 0, 1];
        let d = Design::from_codes(vec![codes.clone(), codes]).unwrap();
        let spec = OracleSpec::from_theta(vec![vec![-1.0, 1.0], vec![-1.0, 1.0]]);
        assert!(matches!(oracle_least_squares(&d, &[0.0, 1.0, 0.0, 1.0], &spec), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn separation_examples() {
        let d = Design::from_codes(vec![(0..20).collect()]).unwrap();
        let equal = OracleSpec::from_theta(vec![vec![0.0; 20]]);
        let r = check_separation(&equal, &d, 8.0, 0.5, 1.0).unwrap();
        assert_eq!(r.variables[0].delta, f64::INFINITY);
        assert!(r.satisfied_global());

        let fig2: Vec<f64> = [(-6.0, 4), (-2.5, 6), (2.5, 6), (6.0, 4)]
            .iter()
            .flat_map(|&(v, c)| std::iter::repeat(v).take(c))
            .collect();
        let spec = OracleSpec::from_theta(vec![fig2]);
        let r = check_separation(&spec, &d, 8.0, 0.5, 1.0).unwrap();
        assert!((r.variables[0].delta - 3.5).abs() < 1e-12);
        // group sizes 4,6,6,4 of n=20 with s=4: eta = min(4*4/20, 20/(4*6))
        assert!((r.eta - 0.8).abs() < 1e-12);

        let r = check_separation(&spec, &d, 8.0, 0.0, 1.0).unwrap();
        assert!(r.satisfied_global() && r.satisfied_blockwise());
    }

    #[test]
    fn separation_is_monotone_in_gaps() {
        let d = Design::from_codes(vec![(0..12).map(|i| i % 6).collect()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let base = vec![-1.0, -1.0, 0.0, 0.0, 1.0, 1.0];
            let scale = rng.random_range(0.5..20.0);
            let lambda = rng.random_range(0.01..0.5);
            let a = OracleSpec::from_theta(vec![base.iter().map(|t| t * scale).collect()]);
            let b = OracleSpec::from_theta(vec![base.iter().map(|t| t * scale * 1.5).collect()]);
            let ra = check_separation(&a, &d, 8.0, lambda, 1.0).unwrap();
            let rb = check_separation(&b, &d, 8.0, lambda, 1.0).unwrap();
            assert!(!ra.satisfied_global() || rb.satisfied_global());
            assert!(!ra.satisfied_blockwise() || rb.satisfied_blockwise());
        }
    }
}
