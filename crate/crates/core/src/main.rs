use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fuel_mfg::calibration::{estimate_sigmas, fit, kmeans, station_features, FitConfig, SIGMA_FALLBACK};
use fuel_mfg::dynamics::{best_reply, simulate, solve_equilibrium_with_root_tol};
use fuel_mfg::io::{
    format_sweep_csv, read_cluster_assignment, read_config, read_initial_prices, read_params, read_price_panel,
    read_sigmas, write_atomic, write_results, ResultRef, SigmasDocument,
};
use fuel_mfg::model::{ClusterParams, MarketState};
use fuel_mfg::{Error, Result};

/// Mean-field price game for petrol stations.
///
/// Exit status: 0 on success, 1 on validation or convergence failure,
/// 2 on I/O failure.
#[derive(Debug, Parser)]
#[command(name = "fuel-mfg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Iterate the daily best-reply dynamics and write the trajectory.
    ///
    /// Output CSV: `day,mean,p_1,...,p_m`, one row per day including day 0,
    /// prices with six decimals.
    Simulate(SimulateArgs),
    /// Solve for the equilibrium price vector and its contraction certificate.
    ///
    /// Output JSON keys: prices, mean, iterations, residual, error_bound,
    /// bound_L, is_contraction, per_agent_A_max.
    Equilibrium(EquilibriumArgs),
    /// Best reply of the first agent as one parameter varies.
    ///
    /// Output CSV: `value,best_reply`.
    Sweep(SweepArgs),
    /// Group stations with k-means on standardised (mean, std) features.
    Cluster(ClusterArgs),
    /// Estimate each station's noise scale from its price series.
    Sigmas(SigmasArgs),
    /// Fit one (alpha, beta, gamma, delta) per cluster to the daily average price.
    ///
    /// Prints the final objective to standard output.
    Fit(FitArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Model configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Initial prices: JSON array with one number per agent.
    #[arg(long)]
    init: PathBuf,
    /// Number of days to simulate; defaults to `days` in the configuration.
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EquilibriumArgs {
    #[arg(long)]
    config: PathBuf,
    /// Starting prices (JSON array); all zero when omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Target distance to the fixed point; defaults to the configuration's `fixed_point_tol`.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// One of alpha, beta, gamma, delta, pbar, pprev.
    #[arg(long)]
    param: String,
    /// `LO:HI:STEPS`, evenly spaced and inclusive; one step gives LO only.
    #[arg(long)]
    range: String,
    /// Current average price held fixed while sweeping.
    #[arg(long, default_value_t = 1.8)]
    pbar: f64,
    /// Own previous price held fixed while sweeping.
    #[arg(long, default_value_t = 1.8)]
    pprev: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Price panel CSV with header `station_id,date,price`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SigmasArgs {
    #[arg(long)]
    data: PathBuf,
    /// Used for stations whose standard deviation is below 1e-3.
    #[arg(long, default_value_t = SIGMA_FALLBACK)]
    fallback: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Cluster assignment JSON written by `cluster`.
    #[arg(long)]
    clusters: PathBuf,
    /// Box for every parameter, `LO:HI`.
    #[arg(long, default_value = "0.10:100")]
    bounds: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    multistart: usize,
    /// Residual evaluations allowed per start.
    #[arg(long, default_value_t = 3000)]
    max_evals: usize,
    /// Noise scales JSON written by `sigmas`; estimated from the data when omitted.
    #[arg(long)]
    sigmas: Option<PathBuf>,
    /// Parameters to use as the first start: JSON array of {alpha, beta, gamma, delta}.
    #[arg(long)]
    start: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_number(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::validation(what, format!("`{s}` is not a finite number")))
}

fn parse_bounds(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::validation("bounds", format!("expected LO:HI, got `{s}`")));
    }
    Ok((parse_number(parts[0], "bounds")?, parse_number(parts[1], "bounds")?))
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::validation("range", format!("expected LO:HI:STEPS, got `{s}`")));
    }
    let lo = parse_number(parts[0], "range")?;
    let hi = parse_number(parts[1], "range")?;
    let steps: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::validation("range", format!("`{}` is not a step count", parts[2])))?;
    if steps == 0 {
        return Err(Error::validation("range", "STEPS must be at least 1"));
    }
    if hi < lo {
        return Err(Error::validation("range", "HI must not be below LO"));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    let h = (hi - lo) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| if i == steps - 1 { hi } else { lo + h * i as f64 })
        .collect())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let (pop, settings) = read_config(&a.config)?;
    let init = read_initial_prices(&a.init)?;
    let days = a
        .days
        .or(settings.days)
        .ok_or_else(|| Error::validation("days", "give --days or set `days` in the configuration"))?;
    if days == 0 {
        return Err(Error::validation("days", "must be at least 1"));
    }
    let initial = MarketState::for_population(init, &pop)?;
    let trajectory = simulate(&pop, &initial, days, settings.root_tol)?;
    write_results(ResultRef::Trajectory(&trajectory), &a.out)
}

fn cmd_equilibrium(a: EquilibriumArgs) -> Result<()> {
    let (pop, settings) = read_config(&a.config)?;
    let init = match &a.init {
        Some(path) => read_initial_prices(path)?,
        None => vec![0.0; pop.len()],
    };
    let initial = MarketState::for_population(init, &pop)?;
    let tol = a.tol.unwrap_or(settings.fixed_point_tol);
    let result = solve_equilibrium_with_root_tol(&pop, &initial, tol, a.max_iter, settings.root_tol)?;
    write_results(ResultRef::Equilibrium(&result), &a.out)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let (pop, settings) = read_config(&a.config)?;
    let values = parse_range(&a.range)?;
    let base = pop.clusters()[pop.agents()[0].cluster];
    let sigma = pop.agents()[0].sigma;
    let param = a.param.as_str();
    if !["alpha", "beta", "gamma", "delta", "pbar", "pprev"].contains(&param) {
        return Err(Error::validation(
            "param",
            format!("unknown parameter `{param}`; expected alpha, beta, gamma, delta, pbar or pprev"),
        ));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in &values {
        let (mut p, mut pbar, mut pprev) = (base, a.pbar, a.pprev);
        match param {
            "alpha" => p.alpha = v,
            "beta" => p.beta = v,
            "gamma" => p.gamma = v,
            "delta" => p.delta = v,
            "pbar" => pbar = v,
            _ => pprev = v,
        }
        let p = ClusterParams::new(p.alpha, p.beta, p.gamma, p.delta)?;
        rows.push((v, best_reply(&p, sigma, pbar, pprev, settings.root_tol)?));
    }
    write_atomic(&a.out, format_sweep_csv(&rows).as_bytes())
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let panel = read_price_panel(&a.data)?;
    let features = station_features(&panel)?;
    let assignment = kmeans(&features, a.k, a.seed, a.max_iter)?;
    write_results(ResultRef::Clusters(&assignment), &a.out)
}

fn cmd_sigmas(a: SigmasArgs) -> Result<()> {
    let panel = read_price_panel(&a.data)?;
    let doc = SigmasDocument {
        stations: panel.station_ids(),
        sigmas: estimate_sigmas(&panel, a.fallback)?,
        fallback: a.fallback,
    };
    write_results(ResultRef::Sigmas(&doc), &a.out)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let panel = read_price_panel(&a.data)?;
    let assignment = read_cluster_assignment(&a.clusters)?;
    assignment.validate(panel.n_stations())?;
    let (lower, upper) = parse_bounds(&a.bounds)?;
    let sigmas = match &a.sigmas {
        Some(path) => {
            let doc = read_sigmas(path)?;
            if doc.stations != panel.station_ids() {
                return Err(Error::validation("sigmas", "stations do not match the price panel"));
            }
            Some(doc.sigmas)
        }
        None => None,
    };
    let pinned_start = a.start.as_deref().map(read_params).transpose()?;
    let config = FitConfig {
        lower,
        upper,
        seed: a.seed,
        multistart: a.multistart,
        max_evals: a.max_evals,
        sigmas,
        pinned_start,
        ..FitConfig::default()
    };
    let result = fit(&panel, &assignment, &config)?;
    write_results(ResultRef::Fit(&result), &a.out)?;
    println!("objective: {:e}", result.objective);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Equilibrium(a) => cmd_equilibrium(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Sigmas(a) => cmd_sigmas(a),
        Command::Fit(a) => cmd_fit(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
