//! Two replications of a low-dimensional setting, as `scopefit simulate` runs them.
use scopefit::evalsim::{preset, run_replication, Metrics};
use scopefit::FitConfig;

fn main() -> scopefit::Result<()> {
    let s = preset("ld3")?;
    let cfg = FitConfig { path_len: 30, ..FitConfig::default() };
    println!("{}", Metrics::HEADER.join(","));
    for rep in 0..2 {
        let m = run_replication(&s, rep, &cfg, 2000)?;
        println!("{},{:.4},{:.3},{:.3},{:.3},{},{},{:.4},{:.2}", m.rep, m.mspe, m.ari, m.fpr, m.fnr, m.df, m.gamma, m.lambda, m.seconds);
    }
    Ok(())
}
