//! Exact univariate fit: eight levels drawn around three values.
use scopefit::{solve_exact, McpParams, WeightedMeans};

fn main() -> scopefit::Result<()> {
    let ybar = vec![-2.1, -1.9, -2.0, 0.1, -0.05, 0.0, 2.9, 3.1];
    let w = vec![1.0 / 8.0; 8];
    let m = WeightedMeans::new(w, ybar.clone())?;
    for lambda in [0.01, 0.1, 0.5] {
        let sol = solve_exact(&m, &McpParams::new(8.0, lambda)?)?;
        println!("lambda {lambda}: {} clusters, objective {:.6}", sol.n_clusters(), sol.objective);
        for (y, t) in ybar.iter().zip(&sol.theta) {
            println!("  {y:6.2} -> {t:8.4}");
        }
    }
    Ok(())
}
