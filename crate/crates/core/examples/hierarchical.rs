//! A nested variable: 4 regions, each with 5 towns. Towns inside a region
//! only differ in region 0.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scopefit::fit::hierarchical_fit;
use scopefit::{Coefficients, Design, Family, FitConfig};

fn main() -> scopefit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let (mut region, mut town, mut y) = (vec![], vec![], vec![]);
    for i in 0..800 {
        let t = i % 20;
        let r = t / 5;
        let effect = [2.0, 0.0, 0.0, -2.0][r] + if r == 0 && t % 5 < 2 { 1.0 } else { 0.0 };
        region.push(r);
        town.push(t);
        y.push(effect + noise.sample(&mut rng));
    }
    let design = Design::from_codes(vec![region, town])?.with_hierarchy(0, 1)?;
    let init = Coefficients::null(&design, &y, Family::Linear);
    let fit = hierarchical_fit(&design, &y, 8.0, 0.05, 0.02, init, &FitConfig::default())?;
    println!("region groups {:?}", fit.coef.clusters(0));
    println!("town groups   {:?}", fit.coef.clusters(1));
    Ok(())
}
