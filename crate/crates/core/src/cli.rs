//! Command-line front end. [`run`] parses arguments and returns the process
//! exit code: 0 on success, 2 on bad arguments or data, 3 when `--strict`
//! is set and a fit did not converge.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data_io::{parse_table, Dataset, FitInfo, ModelFile, RawTable, SchemaHints};
use crate::error::{Error, Result};
use crate::evalsim::{self, Metrics, SimSpec};
use crate::fit::{
    cross_validate, ebic_select, fit_path_with_lambdas, hierarchical_fit, lambda_max, lambda_sequence, logistic_fit,
    predict, Coefficients, Design, Family, FitConfig, FitResult,
};
use crate::penalty::McpParams;
use crate::univariate::{solve_exact, WeightedMeans};
use crate::verify::{check_separation, oracle_least_squares};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Environment variable giving the default worker thread cap.
pub const THREADS_ENV: &str = "SCOPEFIT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "scopefit", version, about = "Categorical regression with exact level fusion")]
pub struct Cli {
    /// Worker threads for paths, cross-validation and replications.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit at one lambda, or along a path with EBIC selection.
    Fit(FitArgs),
    /// Cross-validate over gamma and lambda.
    Cv(CvArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
    /// Run a simulation setting and print per-replication metrics.
    Simulate(SimulateArgs),
    /// Separation conditions and oracle comparison on a simulated design.
    Verify(VerifyArgs),
    /// Time the univariate solver.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub response: String,
    /// Comma-separated categorical columns.
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    /// Comma-separated continuous columns.
    #[arg(long, value_delimiter = ',')]
    pub continuous: Vec<String>,
    #[arg(long, default_value = "linear")]
    pub family: Family,
    /// Nested variables as PARENT:CHILD.
    #[arg(long)]
    pub hierarchy: Option<String>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, conflicts_with_all = ["path", "ratio"])]
    pub lambda: Option<f64>,
    /// Penalty level for the nested variable (defaults to --lambda).
    #[arg(long, requires = "lambda")]
    pub lambda_child: Option<f64>,
    /// Number of lambdas on the path.
    #[arg(long)]
    pub path: Option<usize>,
    /// Smallest lambda as a fraction of the largest.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Sweep limit of the block coordinate descent.
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// EBIC parameter for path selection.
    #[arg(long, default_value_t = 0.0)]
    pub zeta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with code 3 if the selected fit did not converge.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub path: Option<usize>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the full-data fit at the chosen (gamma, lambda) to --out.
    #[arg(long, requires = "out")]
    pub refit: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions CSV (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    pub setting: Option<String>,
    /// JSON SimSpec instead of a named setting.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "8,32")]
    pub gamma_grid: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub path: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Fresh draws for the prediction error.
    #[arg(long, default_value_t = 10_000)]
    pub n_test: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value = "fig2")]
    pub setting: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Replace every template by zeros.
    #[arg(long)]
    pub null: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "50,500,2000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 25)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DATA;
        }
    };
    let stdout = std::io::stdout();
    let result = pool.install(|| dispatch(cli.command, &mut stdout.lock()));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Cv(a) => cmd_cv(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
    }
}

fn load(a: &DataArgs) -> Result<(Dataset, Design)> {
    let hints = SchemaHints {
        response: a.response.clone(),
        categorical: a.categorical.clone(),
        continuous: a.continuous.clone(),
        only_listed: !(a.categorical.is_empty() && a.continuous.is_empty()),
    };
    let ds = parse_table(&RawTable::from_path(&a.data)?, &hints)?;
    if ds.dropped_rows > 0 {
        eprintln!("dropped {} rows with missing values", ds.dropped_rows);
    }
    for name in ds.singleton_flags() {
        eprintln!("warning: {name} has a level observed once");
    }
    let mut design = ds.design()?;
    if let Some(h) = &a.hierarchy {
        let (p, c) = h
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("--hierarchy expects PARENT:CHILD, got {h:?}")))?;
        let index = |name: &str| {
            design
                .vars()
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| Error::invalid(format!("{name:?} is not a categorical column")))
        };
        let (pi, ci) = (index(p)?, index(c)?);
        design = design.with_hierarchy(pi, ci)?;
    }
    Ok((ds, design))
}

fn base_config(family: Family) -> FitConfig {
    match family {
        Family::Linear => FitConfig::default(),
        Family::Logistic => FitConfig::logistic(),
    }
}

fn write_cluster_report(out: &mut dyn Write, design: &Design, coef: &Coefficients) -> Result<()> {
    writeln!(out, "intercept,{}", coef.mu)?;
    for (j, v) in design.vars().iter().enumerate() {
        let ids = coef.clusters(j);
        let groups = ids.iter().max().map_or(0, |m| m + 1);
        writeln!(out, "variable,{},groups,{groups}", v.name)?;
        // largest coefficient first
        for g in (0..groups).rev() {
            let members: Vec<&str> = (0..v.n_levels()).filter(|&k| ids[k] == g).map(|k| v.levels[k].as_str()).collect();
            let k0 = ids.iter().position(|&i| i == g).expect("group is non-empty");
            writeln!(out, "  {:.6},{}", coef.theta[j][k0], members.join(" "))?;
        }
    }
    for (l, name) in design.continuous_names().iter().enumerate() {
        writeln!(out, "continuous,{name},{}", coef.beta[l])?;
    }
    Ok(())
}

fn single_fit(design: &Design, y: &[f64], cfg: &FitConfig, gamma: f64, lambda: f64, child: f64) -> Result<FitResult> {
    let init = Coefficients::null(design, y, cfg.family);
    match cfg.family {
        Family::Linear => hierarchical_fit(design, y, gamma, lambda, child, init, cfg),
        Family::Logistic => Ok(logistic_fit(design, y, gamma, lambda, init, cfg)?.fit),
    }
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> Result<i32> {
    let (ds, design) = load(&a.data)?;
    let mut cfg = base_config(a.data.family);
    let gamma = a.gamma.unwrap_or(cfg.gamma_grid[0]);
    if let Some(n) = a.path {
        cfg.path_len = n;
    }
    if let Some(r) = a.ratio {
        cfg.path_ratio = r;
    }
    cfg.gamma_grid = vec![gamma];
    if let Some(m) = a.max_sweeps {
        cfg.bcd_max_sweeps = m;
    }
    cfg.validate()?;

    let (coef, lambda, info) = if let Some(lambda) = a.lambda {
        let fit = single_fit(&design, &ds.response, &cfg, gamma, lambda, a.lambda_child.unwrap_or(lambda))?;
        writeln!(out, "gamma,{gamma},lambda,{lambda},sweeps,{},converged,{}", fit.sweeps, fit.converged)?;
        let info = FitInfo { objective: fit.objective, sweeps: fit.sweeps, converged: fit.converged };
        (fit.coef, lambda, info)
    } else {
        let lmax = lambda_max(&design, &ds.response, gamma, &cfg)?;
        let entries = fit_path_with_lambdas(&design, &ds.response, &cfg, gamma, &lambda_sequence(lmax, &cfg), 0)?;
        let mut path = crate::fit::SolutionPath { entries };
        let best = ebic_select(&mut path, design.n(), design.total_levels(), a.zeta)?;
        writeln!(out, "lambda,df,rss,ebic,sweeps,converged")?;
        for e in &path.entries {
            writeln!(out, "{},{},{},{},{},{}", e.lambda, e.df, e.rss, e.ebic.unwrap_or(f64::NAN), e.sweeps, e.converged)?;
        }
        let e = path.entries.swap_remove(best);
        writeln!(out, "selected,gamma,{gamma},lambda,{}", e.lambda)?;
        let info = FitInfo { objective: e.objective, sweeps: e.sweeps, converged: e.converged };
        (e.coef, e.lambda, info)
    };
    write_cluster_report(out, &design, &coef)?;
    let converged = info.converged;
    if let Some(path) = &a.out {
        ModelFile::new(&design, &coef, cfg.family, &ds.response_name, gamma, lambda, info).save(path)?;
    }
    Ok(if a.strict && !converged { EXIT_NOT_CONVERGED } else { EXIT_OK })
}

fn cmd_cv(a: &CvArgs, out: &mut dyn Write) -> Result<i32> {
    let (ds, design) = load(&a.data)?;
    let mut cfg = base_config(a.data.family);
    if let Some(g) = &a.gamma_grid {
        cfg.gamma_grid = g.clone();
    }
    if let Some(n) = a.path {
        cfg.path_len = n;
    }
    if let Some(r) = a.ratio {
        cfg.path_ratio = r;
    }
    cfg.cv_folds = a.folds;
    cfg.seed = a.seed;
    let cv = cross_validate(&design, &ds.response, &cfg)?;
    writeln!(out, "gamma,lambda,error,se")?;
    for r in &cv.table {
        writeln!(out, "{},{},{},{}", r.gamma, r.lambda, r.error, r.se)?;
    }
    writeln!(out, "chosen,gamma,{},lambda,{}", cv.gamma, cv.lambda)?;
    let chosen = &cv.path.entries[cv.best];
    if a.refit {
        let info = FitInfo { objective: chosen.objective, sweeps: chosen.sweeps, converged: chosen.converged };
        let m = ModelFile::new(&design, &chosen.coef, cfg.family, &ds.response_name, cv.gamma, cv.lambda, info);
        m.save(a.out.as_ref().expect("clap enforces --out"))?;
    }
    Ok(if a.strict && !chosen.converged { EXIT_NOT_CONVERGED } else { EXIT_OK })
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let model = ModelFile::load(&a.model)?;
    let table = RawTable::from_path(&a.data)?;
    let enc = model.encode(&table)?;
    if enc.unseen > 0 {
        eprintln!("{} cells with levels unseen in training", enc.unseen);
    }
    let pred = predict(&model.coefficients(), model.family, &enc.levels, &enc.z);
    let mut text = String::from("prediction\n");
    for p in pred {
        text.push_str(&format!("{p}\n"));
    }
    write_to(a.out.as_deref(), &text, out)?;
    Ok(EXIT_OK)
}

fn write_to(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn sim_spec(setting: Option<&str>, spec: Option<&Path>, seed: u64, sigma2: Option<f64>) -> Result<SimSpec> {
    let mut s = match (setting, spec) {
        (_, Some(p)) => serde_json::from_slice(&std::fs::read(p)?)?,
        (Some(name), None) => evalsim::preset(name)?,
        (None, None) => return Err(Error::invalid("need --setting or --spec")),
    };
    s.seed = seed;
    if let Some(v) = sigma2 {
        s.sigma2 = v;
    }
    s.validate()?;
    Ok(s)
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let s = sim_spec(a.setting.as_deref(), a.spec.as_deref(), a.seed, a.sigma2)?;
    let cfg = FitConfig {
        gamma_grid: a.gamma_grid.clone(),
        path_len: a.path,
        cv_folds: a.folds,
        seed: a.seed,
        ..FitConfig::default()
    };
    cfg.validate()?;
    let rows = (0..a.reps)
        .into_par_iter()
        .map(|rep| evalsim::run_replication(&s, rep, &cfg, a.n_test))
        .collect::<Result<Vec<Metrics>>>()?;

    let mut text = Metrics::HEADER.join(",") + "\n";
    for m in &rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.rep, m.mspe, m.ari, m.fpr, m.fnr, m.df, m.gamma, m.lambda, m.seconds
        ));
    }
    let mean = |f: &dyn Fn(&Metrics) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
    text.push_str(&format!(
        "mean,{},{},{},{},{},{},{},{}\n",
        mean(&|m| m.mspe),
        mean(&|m| m.ari),
        mean(&|m| m.fpr),
        mean(&|m| m.fnr),
        mean(&|m| m.df as f64),
        mean(&|m| m.gamma),
        mean(&|m| m.lambda),
        mean(&|m| m.seconds)
    ));
    write_to(a.out.as_deref(), &text, out)?;
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let mut s = sim_spec(Some(&a.setting), None, a.seed, None)?;
    if a.null {
        s.theta0.iter_mut().for_each(|t| t.fill(0.0));
    }
    let mut rng = s.rng(0);
    let design = evalsim::gen_design(&s, &mut rng)?;
    let (y, truth) = evalsim::gen_response(&design, &s, &mut rng);
    let spec = truth.oracle_spec();
    let report = check_separation(&spec, &design, a.gamma, a.lambda, s.sigma2.sqrt())?;

    writeln!(out, "eta,{}", report.eta)?;
    writeln!(
        out,
        "variable,delta,s,k,n0_min,n0_max,n_min,gamma_lower,gamma_upper,lambda_j,bound_global,satisfied_global,bound_blockwise,satisfied_blockwise,prob_global_nmin,prob_global_n_over_k"
    )?;
    let clip = |p: f64| p.clamp(0.0, 1.0);
    for (j, v) in report.variables.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            design.vars()[j].name,
            v.delta,
            v.s,
            v.k,
            v.n0_min,
            v.n0_max,
            v.n_min,
            v.gamma_lower,
            v.gamma_upper,
            v.lambda_j,
            v.bound_global,
            v.satisfied_global,
            v.bound_blockwise,
            v.satisfied_blockwise,
            clip(v.prob_global_nmin),
            clip(v.prob_global_balanced)
        )?;
    }
    writeln!(out, "prob_blockwise,{}", clip(report.prob_blockwise))?;

    let cfg = FitConfig::default();
    let fit = single_fit(&design, &y, &cfg, a.gamma, a.lambda, a.lambda)?;
    match oracle_least_squares(&design, &y, &spec) {
        Ok(oracle) => {
            let sup = fit
                .coef
                .theta
                .iter()
                .flatten()
                .zip(oracle.theta.iter().flatten())
                .map(|(x, o)| (x - o).abs())
                .fold((fit.coef.mu - oracle.mu).abs(), f64::max);
            let same = (0..design.n_vars()).all(|j| fit.coef.clusters(j) == oracle.clusters(j));
            writeln!(out, "oracle_sup_distance,{sup}")?;
            writeln!(out, "oracle_groups_recovered,{same}")?;
        }
        Err(e) => writeln!(out, "oracle_least_squares,{e}")?,
    }
    writeln!(out, "fit_converged,{},sweeps,{}", fit.converged, fit.sweeps)?;
    Ok(EXIT_OK)
}

/// Subaverages for `k` levels, one observation each, drawn around three
/// well-separated true values.
pub fn bench_instance(k: usize, rng: &mut ChaCha8Rng) -> WeightedMeans {
    let ybar = (0..k)
        .map(|i| {
            let e: f64 = StandardNormal.sample(rng);
            3.0 * ((i % 3) as f64 - 1.0) + 0.5 * e
        })
        .collect();
    WeightedMeans::new(vec![1.0 / k as f64; k], ybar).expect("valid weights")
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let p = McpParams::new(a.gamma, a.lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    writeln!(out, "k,reps,mean_seconds,max_seconds,clusters")?;
    for &k in &a.sizes {
        let mut times = Vec::with_capacity(a.reps);
        let mut clusters = 0;
        for _ in 0..a.reps.max(1) {
            let m = bench_instance(k, &mut rng);
            let t = Instant::now();
            let sol = solve_exact(&m, &p)?;
            times.push(t.elapsed().as_secs_f64());
            clusters = sol.n_clusters();
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let max = times.iter().copied().fold(0.0, f64::max);
        writeln!(out, "{k},{},{mean:e},{max:e},{clusters}", times.len())?;
    }
    Ok(EXIT_OK)
}
