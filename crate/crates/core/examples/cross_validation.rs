use scopefit::evalsim::{gen_design, gen_response, preset};
use scopefit::fit::cross_validate;
use scopefit::FitConfig;

fn main() -> scopefit::Result<()> {
    let s = preset("ld2")?;
    let mut rng = s.rng(1);
    let design = gen_design(&s, &mut rng)?;
    let (y, _) = gen_response(&design, &s, &mut rng);

    let cfg = FitConfig { path_len: 30, seed: 7, ..FitConfig::default() };
    let cv = cross_validate(&design, &y, &cfg)?;
    println!("chosen gamma {} lambda {:.4}", cv.gamma, cv.lambda);
    let chosen = &cv.path.entries[cv.best];
    for j in 0..design.n_vars() {
        println!("{}: {} groups", design.vars()[j].name, chosen.coef.n_clusters(j));
    }
    Ok(())
}
