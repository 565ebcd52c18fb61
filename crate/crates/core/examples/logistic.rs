//! Binary response: levels 0-5 share a high log-odds, 6-11 a low one.
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scopefit::fit::logistic_fit;
use scopefit::{Coefficients, Design, Family, FitConfig};

fn main() -> scopefit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1200;
    let codes: Vec<usize> = (0..n).map(|i| i % 12).collect();
    let y: Vec<f64> = codes
        .iter()
        .map(|&c| {
            let eta: f64 = if c < 6 { 1.5 } else { -1.5 };
            f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    let design = Design::from_codes(vec![codes])?;
    let cfg = FitConfig::logistic();
    let init = Coefficients::null(&design, &y, Family::Logistic);
    let fit = logistic_fit(&design, &y, 100.0, 0.01, init, &cfg)?;
    println!("iterations {} converged {}", fit.fit.sweeps, fit.fit.converged);
    println!("objective trace {:?}", fit.trace);
    println!("groups {:?}", fit.fit.coef.clusters(0));
    Ok(())
}
