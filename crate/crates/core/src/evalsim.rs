//! Simulated categorical designs and the accuracy metrics used to score
//! fits on them.
//!
//! Covariates come from a Gaussian copula: `W ~ N_p(0, Sigma)` with
//! off-diagonal `2 sin(pi rho / 6)`, `U = Phi(W)` and `X = ceil(K U)`, so
//! that the uniforms `U` have pairwise correlation `rho`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fit::{cross_validate, CategoricalVar, Coefficients, Design, FitConfig};
use crate::verify::OracleSpec;

/// Redraws allowed when a realised design leaves a level empty.
pub const MAX_REDRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Levels drawn through the copula.
    Copula,
    /// Every level appears `n / K` times, in random row order.
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub k: usize,
    /// One coefficient template of length `k` per variable, defined up to
    /// an additive constant.
    pub theta0: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub seed: u64,
    pub layout: Layout,
}

/// Preset names accepted by [`preset`].
pub const PRESETS: [&str; 12] = ["ld1", "ld2", "ld3", "hd1", "hd2", "hd3", "hd4", "hd5", "hd6", "hd7", "hd8", "fig2"];

fn blocks(parts: &[(f64, usize)]) -> Vec<f64> {
    parts.iter().flat_map(|&(v, c)| std::iter::repeat_n(v, c)).collect()
}

fn templates(p: usize, signal: &[(usize, Vec<f64>)], k: usize) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; k]; p];
    let mut j = 0;
    for (count, template) in signal {
        for _ in 0..*count {
            t[j] = template.clone();
            j += 1;
        }
    }
    t
}

/// Named simulation settings. `ld*` use `sigma2 = 1`, the smallest noise
/// level reported for them; set `sigma2` to vary it.
pub fn preset(name: &str) -> Result<SimSpec> {
    let ld = |template: Vec<f64>, rho| SimSpec {
        n: 500,
        p: 10,
        rho,
        k: 24,
        theta0: templates(10, &[(3, template)], 24),
        sigma2: 1.0,
        seed: 0,
        layout: Layout::Copula,
    };
    let hd = |signal: Vec<(usize, Vec<f64>)>, rho, sigma2| SimSpec {
        n: 500,
        p: 100,
        rho,
        k: 24,
        theta0: templates(100, &signal, 24),
        sigma2,
        seed: 0,
        layout: Layout::Copula,
    };
    let a = blocks(&[(-3.0, 10), (0.0, 4), (3.0, 10)]);
    let b = blocks(&[(-3.0, 8), (0.0, 8), (3.0, 8)]);
    let h1a = blocks(&[(-2.0, 8), (0.0, 8), (2.0, 8)]);
    let h1b = blocks(&[(-2.0, 10), (0.0, 4), (2.0, 10)]);
    let h3b = blocks(&[(-2.0, 16), (3.0, 8)]);
    let h4 = blocks(&[(-2.0, 5), (-1.0, 5), (0.0, 4), (1.0, 5), (2.0, 5)]);
    let h7 = blocks(&[(-2.0, 4), (0.0, 12), (2.0, 8)]);
    let h8 = blocks(&[(-3.0, 6), (-1.0, 6), (1.0, 6), (3.0, 6)]);
    Ok(match name {
        "ld1" => ld(a, 0.0),
        "ld2" => ld(b, 0.0),
        "ld3" => ld(a, 0.8),
        "hd1" => hd(vec![(3, h1a), (3, h1b)], 0.0, 50.0),
        "hd2" => hd(vec![(3, h1a), (3, h1b)], 0.5, 50.0),
        "hd3" => hd(vec![(3, h1a), (3, h3b)], 0.5, 100.0),
        "hd4" => hd(vec![(5, h4)], 0.0, 25.0),
        "hd5" => hd(vec![(25, h3b)], 0.0, 1.0),
        "hd6" => hd(vec![(25, h3b)], 0.5, 1.0),
        "hd7" => hd(vec![(10, h7)], 0.0, 25.0),
        "hd8" => hd(vec![(5, h8)], 0.0, 25.0),
        "fig2" => SimSpec {
            n: 20,
            p: 1,
            rho: 0.0,
            k: 20,
            theta0: vec![blocks(&[(-6.0, 4), (-2.5, 6), (2.5, 6), (6.0, 4)])],
            sigma2: 1.0,
            seed: 0,
            layout: Layout::Balanced,
        },
        other => return Err(Error::Simulation(format!("unknown setting {other:?}; expected one of {}", PRESETS.join(", ")))),
    })
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Simulation(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Simulation(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.n == 0 || self.p == 0 || self.k == 0 {
            return Err(Error::Simulation("n, p and k must be positive".into()));
        }
        if self.theta0.len() != self.p || self.theta0.iter().any(|t| t.len() != self.k) {
            return Err(Error::Simulation(format!("need {} templates of length {}", self.p, self.k)));
        }
        if self.layout == Layout::Balanced && !self.n.is_multiple_of(self.k) {
            return Err(Error::Simulation("balanced layout needs n divisible by k".into()));
        }
        Ok(())
    }

    /// Generator for replication `rep`: `seed` selects the key and
    /// the replication the stream, so results do not depend on scheduling.
    pub fn rng(&self, rep: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep);
        rng
    }

    /// Signal variables: those whose template is not constant.
    pub fn signal_vars(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| self.theta0[j].iter().any(|&t| t != self.theta0[j][0])).collect()
    }
}

/// Uniform-margin correlation `rho` to Gaussian correlation.
pub fn copula_correlation(rho: f64) -> f64 {
    2.0 * (std::f64::consts::PI * rho / 6.0).sin()
}

/// Level codes (0-based), one vector per variable.
pub fn draw_codes(s: &SimSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match s.layout {
        Layout::Balanced => (0..s.p)
            .map(|_| {
                let mut c: Vec<usize> = (0..n).map(|i| i % s.k).collect();
                c.shuffle(rng);
                c
            })
            .collect(),
        Layout::Copula => {
            let r = copula_correlation(s.rho);
            let (shared, own) = (r.sqrt(), (1.0 - r).sqrt());
            let phi = Normal::standard();
            let mut codes = vec![Vec::with_capacity(n); s.p];
            for _ in 0..n {
                let z0: f64 = StandardNormal.sample(rng);
                for c in codes.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    let u = phi.cdf(shared * z0 + own * z);
                    let x = ((s.k as f64 * u).ceil() as usize).clamp(1, s.k);
                    c.push(x - 1);
                }
            }
            codes
        }
    }
}

/// Design with every level observed, redrawn up to [`MAX_REDRAWS`] times.
pub fn gen_design(s: &SimSpec, rng: &mut ChaCha8Rng) -> Result<Design> {
    s.validate()?;
    for _ in 0..MAX_REDRAWS {
        let codes = draw_codes(s, s.n, rng);
        let complete = codes.iter().all(|c| {
            let mut seen = vec![false; s.k];
            c.iter().for_each(|&x| seen[x] = true);
            seen.iter().all(|&b| b)
        });
        if complete {
            let vars = codes
                .into_iter()
                .enumerate()
                .map(|(j, c)| CategoricalVar::from_codes(format!("x{}", j + 1), c, s.k))
                .collect::<Result<Vec<_>>>()?;
            return Design::new(vars, Vec::new());
        }
    }
    Err(Error::Simulation(format!("no design with all {} levels observed after {MAX_REDRAWS} draws", s.k)))
}

/// True regression function `g(x) = mu + sum_j theta[j][x_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub mu: f64,
    pub theta: Vec<Vec<f64>>,
}

impl Truth {
    /// Templates shifted to satisfy `sum_k n_jk theta_jk = 0` on `design`.
    pub fn centred(s: &SimSpec, design: &Design) -> Self {
        let n = design.n() as f64;
        let theta = s
            .theta0
            .iter()
            .zip(design.vars())
            .map(|(t, v)| {
                let c = v.counts().iter().zip(t).map(|(&m, x)| m as f64 * x).sum::<f64>() / n;
                t.iter().map(|x| x - c).collect()
            })
            .collect();
        Self { mu: 0.0, theta }
    }

    pub fn eval(&self, codes: impl Iterator<Item = usize>) -> f64 {
        self.mu + self.theta.iter().zip(codes).map(|(t, c)| t[c]).sum::<f64>()
    }

    pub fn oracle_spec(&self) -> OracleSpec {
        OracleSpec::from_theta(self.theta.clone())
    }

    pub fn as_coefficients(&self) -> Coefficients {
        Coefficients { mu: self.mu, theta: self.theta.clone(), beta: Vec::new(), z_center: Vec::new() }
    }
}

/// `y = g(x) + eps` with `eps ~ N(0, sigma2)`.
pub fn gen_response(design: &Design, s: &SimSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Truth) {
    let truth = Truth::centred(s, design);
    let sd = s.sigma2.sqrt();
    let y = (0..design.n())
        .map(|i| {
            let e: f64 = StandardNormal.sample(rng);
            truth.eval(design.vars().iter().map(|v| v.codes()[i])) + sd * e
        })
        .collect();
    (y, truth)
}

/// Monte Carlo estimate of `E (g(x) - ghat(x))^2` over `n_test` fresh
/// covariate draws.
pub fn mspe(fit: &Coefficients, truth: &Truth, s: &SimSpec, n_test: usize, rng: &mut ChaCha8Rng) -> f64 {
    let codes = draw_codes(s, n_test, rng);
    let mut total = 0.0;
    let mut row = vec![None; s.p];
    for i in 0..n_test {
        for (r, c) in row.iter_mut().zip(&codes) {
            *r = Some(c[i]);
        }
        let d = truth.eval(codes.iter().map(|c| c[i])) - fit.predict_row(&row, &[]);
        total += d * d;
    }
    total / n_test as f64
}

/// Standard deviation of `g(x)` over the covariate distribution divided by
/// the noise standard deviation, by Monte Carlo on one realised design.
pub fn snr(s: &SimSpec, n_mc: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = gen_design(s, rng)?;
    let truth = Truth::centred(s, &d);
    let g: Vec<f64> = {
        let codes = draw_codes(s, n_mc, rng);
        (0..n_mc).map(|i| truth.eval(codes.iter().map(|c| c[i]))).collect()
    };
    let mean = g.iter().sum::<f64>() / n_mc as f64;
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_mc as f64;
    Ok((var / s.sigma2).sqrt())
}

fn pairs(m: u128) -> u128 {
    m * m.saturating_sub(1) / 2
}

/// Adjusted Rand index of two labellings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("partitions of {} and {} items", a.len(), b.len())));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u128; ka * kb];
    let mut ra = vec![0u128; ka];
    let mut rb = vec![0u128; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    let index = table.iter().map(|&m| pairs(m)).sum::<u128>() as f64;
    let sa = ra.iter().map(|&m| pairs(m)).sum::<u128>() as f64;
    let sb = rb.iter().map(|&m| pairs(m)).sum::<u128>() as f64;
    let total = pairs(a.len() as u128) as f64;
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both partitions trivial in the same way
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// `(FPR, FNR)`: selected null variables over null variables, and
/// unselected signal variables over signal variables.
pub fn selection_rates(fit: &Coefficients, spec: &OracleSpec) -> (f64, f64) {
    let (mut null, mut false_pos, mut signal, mut false_neg) = (0usize, 0usize, 0usize, 0usize);
    for j in 0..spec.groups.len() {
        let selected = fit.is_selected(j);
        if spec.n_groups(j) <= 1 {
            null += 1;
            false_pos += selected as usize;
        } else {
            signal += 1;
            false_neg += !selected as usize;
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (rate(false_pos, null), rate(false_neg, signal))
}

/// Splits levels of every categorical variable until each has `m` times
/// its original number of levels. A level is chosen with probability
/// proportional to its count and its observations are sent to `label-0` or
/// `label-1` by fair coin flips (redrawn if one side would be empty).
/// Levels observed once cannot be split.
pub fn split_levels(design: &Design, m: usize, seed: u64) -> Result<Design> {
    if m < 1 {
        return Err(Error::invalid("multiplier must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars = Vec::with_capacity(design.n_vars());
    for v in design.vars() {
        let target = m * v.n_levels();
        let mut levels = v.levels.clone();
        let mut codes = v.codes().to_vec();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); levels.len()];
        for (i, &c) in codes.iter().enumerate() {
            members[c].push(i);
        }
        while levels.len() < target {
            let splittable: usize = members.iter().filter(|r| r.len() > 1).map(Vec::len).sum();
            if splittable == 0 {
                return Err(Error::Simulation(format!("variable {}: no level has two observations to split", v.name)));
            }
            let mut pick = rng.random_range(0..splittable);
            let level = members
                .iter()
                .position(|r| {
                    if r.len() < 2 {
                        return false;
                    }
                    if pick < r.len() {
                        return true;
                    }
                    pick -= r.len();
                    false
                })
                .expect("pick is below the splittable total");
            let rows = std::mem::take(&mut members[level]);
            let (zero, one) = loop {
                let (z, o): (Vec<usize>, Vec<usize>) = rows.iter().partition(|_| rng.random_bool(0.5));
                if !z.is_empty() && !o.is_empty() {
                    break (z, o);
                }
            };
            let parent = levels[level].clone();
            levels[level] = format!("{parent}-0");
            levels.push(format!("{parent}-1"));
            let new = levels.len() - 1;
            for &i in &one {
                codes[i] = new;
            }
            members[level] = zero;
            members.push(one);
        }
        vars.push(CategoricalVar::new(v.name.clone(), levels, codes)?);
    }
    Design::new(vars, design.raw_continuous())
}

/// Scores of one replication.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub rep: u64,
    pub mspe: f64,
    /// Mean ARI over signal variables (`NaN` if there are none).
    pub ari: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub df: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub seconds: f64,
}

impl Metrics {
    pub const HEADER: [&'static str; 9] = ["rep", "mspe", "ari", "fpr", "fnr", "df", "gamma", "lambda", "seconds"];
}

/// Per-signal-variable ARI between the fitted and true level groupings.
pub fn signal_ari(fit: &Coefficients, truth: &Truth) -> Vec<f64> {
    let spec = truth.oracle_spec();
    (0..spec.groups.len())
        .filter(|&j| spec.n_groups(j) > 1)
        .map(|j| adjusted_rand_index(&fit.clusters(j), &spec.groups[j]).expect("same number of levels"))
        .collect()
}

/// Simulates, cross-validates over `cfg.gamma_grid` and scores one
/// replication.
pub fn run_replication(s: &SimSpec, rep: u64, cfg: &FitConfig, n_test: usize) -> Result<Metrics> {
    let start = Instant::now();
    let mut rng = s.rng(rep);
    let design = gen_design(s, &mut rng)?;
    let (y, truth) = gen_response(&design, s, &mut rng);
    let cv_cfg = FitConfig { seed: cfg.seed ^ rep, ..cfg.clone() };
    let cv = cross_validate(&design, &y, &cv_cfg)?;
    let entry = &cv.path.entries[cv.best];
    let fit = &entry.coef;
    let aris = signal_ari(fit, &truth);
    let (fpr, fnr) = selection_rates(fit, &truth.oracle_spec());
    Ok(Metrics {
        rep,
        mspe: mspe(fit, &truth, s, n_test, &mut rng),
        ari: if aris.is_empty() { f64::NAN } else { aris.iter().sum::<f64>() / aris.len() as f64 },
        fpr,
        fnr,
        df: entry.df,
        gamma: entry.gamma,
        lambda: entry.lambda,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::ChiSquared;

    #[test]
    fn presets_enumerate() {
        for name in PRESETS {
            let s = preset(name).unwrap();
            s.validate().unwrap();
        }
        assert_eq!(PRESETS.iter().filter(|n| n.starts_with("ld")).count(), 3);
        assert_eq!(PRESETS.iter().filter(|n| n.starts_with("hd")).count(), 8);
        assert_eq!(preset("hd6").unwrap().signal_vars().len(), 25);
        assert!(preset("hd9").is_err());
    }

    #[test]
    fn uniform_levels_at_rho_zero() {
        let s = SimSpec { n: 50_000, p: 2, ..preset("ld1").unwrap() };
        let s = SimSpec { theta0: vec![vec![0.0; 24]; 2], ..s };
        let codes = draw_codes(&s, s.n, &mut s.rng(0));
        for c in &codes {
            assert!(c.iter().all(|&x| x < 24));
            let mut counts = [0f64; 24];
            c.iter().for_each(|&x| counts[x] += 1.0);
            let e = s.n as f64 / 24.0;
            let chi2: f64 = counts.iter().map(|o| (o - e) * (o - e) / e).sum();
            let p = 1.0 - ChiSquared::new(23.0).unwrap().cdf(chi2);
            assert!(p > 0.001, "chi2 {chi2}, p {p}");
        }
    }

    #[test]
    fn copula_hits_uniform_correlation() {
        let r = copula_correlation(0.8);
        let (a, b) = (r.sqrt(), (1.0 - r).sqrt());
        let phi = Normal::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let (mut su, mut sv, mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let u = phi.cdf(a * z0 + b * z1);
            let v = phi.cdf(a * z0 + b * z2);
            su += u;
            sv += v;
            suv += u * v;
            suu += u * u;
            svv += v * v;
        }
        let nf = n as f64;
        let cov = suv / nf - su * sv / (nf * nf);
        let corr = cov / ((suu / nf - (su / nf).powi(2)) * (svv / nf - (sv / nf).powi(2))).sqrt();
        assert!((corr - 0.8).abs() < 0.02, "{corr}");
    }

    #[test]
    fn design_is_deterministic_and_complete() {
        let s = preset("ld3").unwrap();
        let a = gen_design(&s, &mut s.rng(0)).unwrap();
        let b = gen_design(&s, &mut s.rng(0)).unwrap();
        let c = gen_design(&s, &mut s.rng(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.vars().iter().all(|v| v.n_levels() == 24));

        let tiny = SimSpec { n: 10, ..s };
        assert!(matches!(gen_design(&tiny, &mut tiny.rng(0)), Err(Error::Simulation(_))));
    }

    #[test]
    fn response_limits() {
        let s = SimSpec { sigma2: 1e-20, ..preset("ld1").unwrap() };
        let mut rng = s.rng(0);
        let d = gen_design(&s, &mut rng).unwrap();
        let (y, truth) = gen_response(&d, &s, &mut rng);
        assert!(truth.theta.iter().zip(d.vars()).all(|(t, v)| {
            v.counts().iter().zip(t).map(|(&m, x)| m as f64 * x).sum::<f64>().abs() < 1e-9
        }));
        for (i, yi) in y.iter().enumerate() {
            assert!((yi - truth.eval(d.vars().iter().map(|v| v.codes()[i]))).abs() < 1e-8);
        }

        let zero = SimSpec { theta0: vec![vec![0.0; 24]; 10], ..s.clone() };
        let (y, truth) = gen_response(&d, &zero, &mut rng);
        assert!(truth.theta.iter().flatten().all(|&t| t == 0.0));
        assert!(y.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn snr_near_table_value() {
        // setting 1 at sigma2 = 1 is reported as 4.7
        let s = preset("ld1").unwrap();
        for seed in 0..3 {
            let v = snr(&SimSpec { seed, ..s.clone() }, 20_000, &mut s.rng(seed)).unwrap();
            assert!((v - 4.7).abs() < 0.3, "{v}");
        }
    }

    #[test]
    fn mspe_of_exact_and_shifted_fits() {
        let s = preset("ld1").unwrap();
        let mut rng = s.rng(0);
        let d = gen_design(&s, &mut rng).unwrap();
        let (_, truth) = gen_response(&d, &s, &mut rng);
        assert_eq!(mspe(&truth.as_coefficients(), &truth, &s, 1000, &mut rng), 0.0);
        let mut shifted = truth.as_coefficients();
        shifted.mu += 0.5;
        assert!((mspe(&shifted, &truth, &s, 1000, &mut rng) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 2], &[5, 5, 3, 4]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-15);
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let a: Vec<usize> = (0..20).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<usize> = (0..20).map(|_| rng.random_range(0..5)).collect();
            let x = adjusted_rand_index(&a, &b).unwrap();
            assert_eq!(x, adjusted_rand_index(&b, &a).unwrap());
            assert!((-1.0..=1.0).contains(&x));
            // refining a nontrivial partition lowers the index
            let refined: Vec<usize> = a.iter().enumerate().map(|(i, &g)| 2 * g + (i % 2)).collect();
            assert!(adjusted_rand_index(&a, &refined).unwrap() < 1.0);
        }
    }

    #[test]
    fn selection_rate_bookkeeping() {
        let spec = OracleSpec::from_theta(vec![vec![0.0, 0.0], vec![-1.0, 1.0], vec![0.0, 0.0], vec![1.0, -1.0]]);
        let perfect = Coefficients { mu: 0.0, theta: spec.theta0.clone(), beta: vec![], z_center: vec![] };
        assert_eq!(selection_rates(&perfect, &spec), (0.0, 0.0));
        let zero = Coefficients { theta: vec![vec![0.0; 2]; 4], ..perfect.clone() };
        assert_eq!(selection_rates(&zero, &spec), (0.0, 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let theta = (0..4).map(|_| if rng.random_bool(0.5) { vec![0.0, 0.0] } else { vec![-0.3, 0.3] }).collect();
            let fit = Coefficients { theta, ..perfect.clone() };
            let (fpr, fnr) = selection_rates(&fit, &spec);
            let selected_null = (fpr * 2.0).round() as usize;
            let missed = (fnr * 2.0).round() as usize;
            let selected = (0..4).filter(|&j| fit.is_selected(j)).count();
            assert_eq!(selected_null + (2 - missed), selected);
        }
    }

    #[test]
    fn splitting_levels() {
        let s = preset("ld1").unwrap();
        let d = gen_design(&s, &mut s.rng(0)).unwrap();
        assert_eq!(split_levels(&d, 1, 0).unwrap(), d);
        let sp = split_levels(&d, 2, 0).unwrap();
        assert_eq!(sp.n(), d.n());
        for (a, b) in d.vars().iter().zip(sp.vars()) {
            assert_eq!(b.n_levels(), 2 * a.n_levels());
            // every new level lies inside one original level, and the
            // children partition their parent's observations
            let mut owner = vec![None; b.n_levels()];
            for (&pa, &ch) in a.codes().iter().zip(b.codes()) {
                assert_eq!(*owner[ch].get_or_insert(pa), pa);
            }
            for (k, &count) in a.counts().iter().enumerate() {
                let kids: usize = (0..b.n_levels()).filter(|&c| owner[c] == Some(k)).map(|c| b.counts()[c]).sum();
                assert_eq!(kids, count);
            }
        }
        assert!(split_levels(&Design::from_codes(vec![vec![0, 1]]).unwrap(), 2, 0).is_err());
    }
}
