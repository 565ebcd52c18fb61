//! Large-sample behaviour on a Setting-1-style design.
use scopefit::evalsim::{gen_design, gen_response, mspe, preset, SimSpec};
use scopefit::fit::bcd_fit;
use scopefit::verify::oracle_least_squares;
use scopefit::{Coefficients, Family, FitConfig};

fn large(n: usize) -> SimSpec {
    SimSpec { n, ..preset("ld1").unwrap() }
}

#[test]
fn oracle_least_squares_mspe_vanishes() {
    let s = large(20_000);
    let mut rng = s.rng(0);
    let design = gen_design(&s, &mut rng).unwrap();
    let (y, truth) = gen_response(&design, &s, &mut rng);
    let oracle = oracle_least_squares(&design, &y, &truth.oracle_spec()).unwrap();
    let err = mspe(&oracle, &truth, &s, 20_000, &mut rng);
    assert!(err <= 0.01, "oracle MSPE {err}");
}

#[test]
fn penalised_fit_tracks_the_oracle_at_large_n() {
    let s = large(20_000);
    let mut rng = s.rng(1);
    let design = gen_design(&s, &mut rng).unwrap();
    let (y, truth) = gen_response(&design, &s, &mut rng);
    let oracle = oracle_least_squares(&design, &y, &truth.oracle_spec()).unwrap();
    let fit = bcd_fit(&design, &y, 8.0, 0.05, Coefficients::null(&design, &y, Family::Linear), &FitConfig::default()).unwrap();
    assert!(fit.converged);
    for j in 0..design.n_vars() {
        assert_eq!(fit.coef.clusters(j), oracle.clusters(j), "variable {j}");
    }
    let a = mspe(&fit.coef, &truth, &s, 20_000, &mut s.rng(7));
    let b = mspe(&oracle, &truth, &s, 20_000, &mut s.rng(7));
    assert!((a - b).abs() < 1e-6, "fit {a} oracle {b}");
}
