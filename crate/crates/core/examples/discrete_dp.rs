//! The grid dynamic program against the exact solver on the same data.
use scopefit::univariate::{default_grid, solve_discrete};
use scopefit::{solve_exact, McpParams, WeightedMeans};

fn main() -> scopefit::Result<()> {
    let m = WeightedMeans::new(vec![0.3, 0.2, 0.1, 0.25, 0.15], vec![1.4, 1.1, -0.3, -1.2, 0.2])?;
    let p = McpParams::new(4.0, 0.2)?;
    let exact = solve_exact(&m, &p)?;
    println!("exact      objective {:.8} clusters {:?}", exact.objective, exact.clusters);
    for len in [16, 256, 2048] {
        let d = solve_discrete(&m, &p, &default_grid(&m, len))?;
        println!("grid {len:5} objective {:.8} clusters {:?}", d.objective, d.clusters);
    }
    Ok(())
}
