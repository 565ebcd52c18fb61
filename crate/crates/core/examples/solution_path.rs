//! A lambda path on simulated data with EBIC selection.
use scopefit::evalsim::{gen_design, gen_response, preset, signal_ari};
use scopefit::fit::{ebic_select, fit_path};
use scopefit::FitConfig;

fn main() -> scopefit::Result<()> {
    let s = preset("ld1")?;
    let mut rng = s.rng(0);
    let design = gen_design(&s, &mut rng)?;
    let (y, truth) = gen_response(&design, &s, &mut rng);

    let cfg = FitConfig { gamma_grid: vec![8.0], path_len: 40, ..FitConfig::default() };
    let mut path = fit_path(&design, &y, &cfg)?;
    let best = ebic_select(&mut path, design.n(), design.total_levels(), 0.0)?;
    for (i, e) in path.entries.iter().enumerate().step_by(5) {
        println!("{i:3} lambda {:.4} df {:3} rss {:9.3}", e.lambda, e.df, e.rss);
    }
    let e = &path.entries[best];
    println!("EBIC picks lambda {:.4} with df {}", e.lambda, e.df);
    println!("ARI on the signal variables: {:?}", signal_ari(&e.coef, &truth));
    Ok(())
}
