use nalgebra::{DMatrix, DVector};

use super::coef::Coefficients;
use super::design::Design;
use crate::error::{Error, Result};

/// Design matrix of the grouped parametrisation: intercept, `s_j - 1` free
/// group values per variable (the last group is eliminated through the
/// constraint), then the centred continuous columns.
struct GroupedDesign {
    x: DMatrix<f64>,
    n_groups: Vec<usize>,
    group_mass: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    cont_offset: usize,
}

impl GroupedDesign {
    fn new(design: &Design, groups: &[Vec<usize>]) -> Result<Self> {
        let n = design.n();
        let n_groups: Vec<usize> = groups.iter().map(|g| g.iter().max().map_or(0, |m| m + 1)).collect();

        // column layout: intercept, free groups of each variable, continuous
        let mut group_mass: Vec<Vec<f64>> = Vec::new();
        let mut offsets = Vec::new();
        let mut cols = 1;
        for (j, v) in design.vars().iter().enumerate() {
            if groups[j].len() != v.n_levels() {
                return Err(Error::invalid(format!("grouping of variable {j} has the wrong number of levels")));
            }
            let mut mass = vec![0.0; n_groups[j]];
            for (&c, &count) in groups[j].iter().zip(v.counts()) {
                mass[c] += count as f64;
            }
            group_mass.push(mass);
            offsets.push(cols);
            cols += n_groups[j].saturating_sub(1);
        }
        let cont_offset = cols;
        cols += design.n_continuous();

        let mut x = DMatrix::<f64>::zeros(n, cols);
        for i in 0..n {
            x[(i, 0)] = 1.0;
        }
        for (j, v) in design.vars().iter().enumerate() {
            if n_groups[j] < 2 {
                continue;
            }
            let last = n_groups[j] - 1;
            let mass = &group_mass[j];
            for (i, &code) in v.codes().iter().enumerate() {
                let g = groups[j][code];
                if g == last {
                    for h in 0..last {
                        x[(i, offsets[j] + h)] -= mass[h] / mass[last];
                    }
                } else {
                    x[(i, offsets[j] + g)] += 1.0;
                }
            }
        }
        for l in 0..design.n_continuous() {
            for (i, z) in design.z(l).iter().enumerate() {
                x[(i, cont_offset + l)] = *z;
            }
        }
        Ok(Self { x, n_groups, group_mass, offsets, cont_offset })
    }

    /// Group values of variable `j` from the free parameters.
    fn group_values(&self, sol: &DVector<f64>, j: usize) -> Vec<f64> {
        let last = self.n_groups[j] - 1;
        let mut phi: Vec<f64> = (0..last).map(|h| sol[self.offsets[j] + h]).collect();
        let tail = -(0..last).map(|h| self.group_mass[j][h] * phi[h]).sum::<f64>() / self.group_mass[j][last];
        phi.push(tail);
        phi
    }

    fn coefficients(&self, design: &Design, groups: &[Vec<usize>], sol: &DVector<f64>) -> Coefficients {
        let mut coef = Coefficients::zeros(design, sol[0]);
        for (j, v) in design.vars().iter().enumerate() {
            if self.n_groups[j] < 2 {
                continue;
            }
            let phi = self.group_values(sol, j);
            coef.theta[j] = (0..v.n_levels()).map(|k| phi[groups[j][k]]).collect();
        }
        for l in 0..design.n_continuous() {
            coef.beta[l] = sol[self.cont_offset + l];
        }
        coef
    }

    /// Free parameters reproducing `coef`, whose levels must be constant on
    /// the groups.
    fn parameters(&self, groups: &[Vec<usize>], coef: &Coefficients) -> DVector<f64> {
        let mut b = DVector::zeros(self.x.ncols());
        b[0] = coef.mu;
        for (j, g) in groups.iter().enumerate() {
            for (k, &h) in g.iter().enumerate() {
                if h + 1 < self.n_groups[j] {
                    b[self.offsets[j] + h] = coef.theta[j][k];
                }
            }
        }
        for (l, beta) in coef.beta.iter().enumerate() {
            b[self.cont_offset + l] = *beta;
        }
        b
    }

    /// `X^T W X` and `X^T W t`.
    fn normal_equations(&self, target: &[f64], weights: Option<&[f64]>) -> (DMatrix<f64>, DVector<f64>) {
        let mut xw = self.x.clone();
        if let Some(w) = weights {
            for (i, wi) in w.iter().enumerate() {
                xw.row_mut(i).scale_mut(*wi);
            }
        }
        (xw.transpose() * &self.x, xw.transpose() * DVector::from_column_slice(target))
    }
}


fn check_inputs(design: &Design, target: &[f64], weights: Option<&[f64]>, groups: &[Vec<usize>]) -> Result<()> {
    let n = design.n();
    if target.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::invalid("response length does not match the design"));
    }
    if groups.len() != design.n_vars() {
        return Err(Error::invalid("one grouping per variable is required"));
    }
    Ok(())
}

/// Weighted least squares over coefficients that are constant on the given
/// level groups (`groups[j][k]` is the group of level `k` of variable `j`),
/// subject to `sum_k n_jk theta_jk = 0`, by the normal equations.
pub fn grouped_least_squares(
    design: &Design,
    target: &[f64],
    weights: Option<&[f64]>,
    groups: &[Vec<usize>],
) -> Result<Coefficients> {
    check_inputs(design, target, weights, groups)?;
    let gd = GroupedDesign::new(design, groups)?;
    let (xtx, xty) = gd.normal_equations(target, weights);
    let sv = xtx.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient(format!("{} columns, smallest singular value {smin:e}", xtx.ncols())));
    }
    let sol = xtx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("normal equations are not positive definite".into()))?
        .solve(&xty);
    Ok(gd.coefficients(design, groups, &sol))
}

/// Newton step for the penalised objective restricted to the current level
/// partition, with the order of the group values and the regime of every
/// gap (concave part of the MCP or saturated) held fixed. On that region
/// the objective is quadratic, so the step lands on its stationary point;
/// `None` if the restricted Hessian is not positive definite.
///
/// `lambdas[j]` is the MCP level of variable `j`.
pub(crate) fn partition_newton(
    design: &Design,
    target: &[f64],
    weights: Option<&[f64]>,
    coef: &Coefficients,
    gamma: f64,
    lambdas: &[f64],
) -> Option<Coefficients> {
    let groups: Vec<Vec<usize>> = (0..design.n_vars()).map(|j| coef.clusters(j)).collect();
    let gd = GroupedDesign::new(design, &groups).ok()?;
    let n = design.n() as f64;
    let b = gd.parameters(&groups, coef);
    let (xtx, xty) = gd.normal_equations(target, weights);
    let mut h = xtx / n;
    let mut g = (&h * &b) - xty / n;

    for j in 0..design.n_vars() {
        let s = gd.n_groups[j];
        if s < 2 {
            continue;
        }
        let phi = gd.group_values(&b, j);
        let last = s - 1;
        // d phi / d u: identity on the free groups, -mass_h/mass_last for the last
        let dphi = |group: usize, free: usize| -> f64 {
            if group == last {
                -gd.group_mass[j][free] / gd.group_mass[j][last]
            } else if group == free {
                1.0
            } else {
                0.0
            }
        };
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &c| phi[a].total_cmp(&phi[c]));
        for w in order.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let d = phi[hi] - phi[lo];
            if d >= gamma * lambdas[j] {
                continue;
            }
            // rho(d) = lambda d - d^2 / (2 gamma) on this gap
            let slope = lambdas[j] - d / gamma;
            let a: Vec<f64> = (0..last).map(|f| dphi(hi, f) - dphi(lo, f)).collect();
            for (f, af) in a.iter().enumerate() {
                g[gd.offsets[j] + f] += slope * af;
                for (e, ae) in a.iter().enumerate() {
                    h[(gd.offsets[j] + f, gd.offsets[j] + e)] -= af * ae / gamma;
                }
            }
        }
    }
    let step = h.cholesky()?.solve(&g);
    Some(gd.coefficients(design, &groups, &(b - step)))
}
