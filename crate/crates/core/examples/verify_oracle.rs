//! Separation conditions and the oracle least squares fit on a balanced,
//! well-separated univariate design.
use scopefit::evalsim::{gen_design, gen_response, Layout, SimSpec};
use scopefit::fit::bcd_fit;
use scopefit::verify::{check_separation, oracle_least_squares};
use scopefit::{Coefficients, Family, FitConfig};

fn main() -> scopefit::Result<()> {
    let s = SimSpec {
        n: 3000,
        p: 1,
        rho: 0.0,
        k: 6,
        theta0: vec![vec![-5.0, -5.0, 0.0, 0.0, 5.0, 5.0]],
        sigma2: 0.25,
        seed: 0,
        layout: Layout::Balanced,
    };
    let mut rng = s.rng(0);
    let design = gen_design(&s, &mut rng)?;
    let (y, truth) = gen_response(&design, &s, &mut rng);
    let spec = truth.oracle_spec();

    let (gamma, lambda) = (8.0, 0.03);
    let report = check_separation(&spec, &design, gamma, lambda, s.sigma2.sqrt())?;
    let v = &report.variables[0];
    println!("eta {:.3}, delta {} against bound {:.3}: {}", report.eta, v.delta, v.bound_global, v.satisfied_global);
    println!("recovery probability at least {:.5}", v.prob_global_nmin.max(0.0));

    let oracle = oracle_least_squares(&design, &y, &spec)?;
    let init = Coefficients::null(&design, &y, Family::Linear);
    let fit = bcd_fit(&design, &y, gamma, lambda, init, &FitConfig::default())?;
    let sup = fit.coef.theta[0].iter().zip(&oracle.theta[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("sup distance to the oracle fit {sup:.2e}");
    Ok(())
}
