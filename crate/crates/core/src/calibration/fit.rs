use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::kmeans::ClusterAssignment;
use super::lsq::{least_squares_box, LeastSquaresOptions};
use super::panel::PricePanel;
use super::stats::{estimate_sigmas, SIGMA_FALLBACK};
use crate::dynamics::simulate;
use crate::error::{Error, Result};
use crate::model::{flatten_params, unflatten_params, Agent, ClusterParams, MarketState, Population, Regime};
use crate::numerics::DEFAULT_ROOT_TOL;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Every parameter is kept in `[lower, upper]`.
    pub lower: f64,
    pub upper: f64,
    /// Drives the multistart draws.
    pub seed: u64,
    /// Number of least-squares starts, pinned start included.
    pub multistart: usize,
    /// Days entering the objective; every day when `None`.
    pub subsample: Option<Vec<usize>>,
    /// Residual-evaluation budget per start.
    pub max_evals: usize,
    /// Per-station noise scales; estimated from the panel when `None`.
    pub sigmas: Option<Vec<f64>>,
    pub sigma_fallback: f64,
    /// Optional first start, e.g. a previous fit or known parameters.
    pub pinned_start: Option<Vec<ClusterParams>>,
    pub root_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lower: 0.10,
            upper: 100.0,
            seed: 0,
            multistart: 8,
            subsample: None,
            max_evals: 3000,
            sigmas: None,
            sigma_fallback: SIGMA_FALLBACK,
            pinned_start: None,
            root_tol: DEFAULT_ROOT_TOL,
        }
    }
}

impl FitConfig {
    fn validate(&self, n_days: usize) -> Result<()> {
        if !(self.lower > 0.0 && self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper) {
            return Err(Error::invalid(format!(
                "bounds must satisfy 0 < lower <= upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if self.multistart == 0 {
            return Err(Error::invalid("multistart must be at least 1"));
        }
        if self.max_evals == 0 {
            return Err(Error::invalid("max_evals must be at least 1"));
        }
        if let Some(s) = &self.subsample {
            check_subsample(s, n_days)?;
        }
        Ok(())
    }
}

fn check_subsample(days: &[usize], n_days: usize) -> Result<()> {
    if days.is_empty() {
        return Err(Error::validation("subsample", "must select at least one day"));
    }
    if days.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(
            "subsample",
            "day indices must be strictly increasing",
        ));
    }
    if let Some(&last) = days.last() {
        if last >= n_days {
            return Err(Error::validation(
                "subsample",
                format!("day {last} is outside a series of {n_days} days"),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub params: Vec<ClusterParams>,
    /// Sum of squared residuals at `params`.
    pub objective: f64,
    /// Model minus observed average on every fitted day.
    pub residual_series: Vec<f64>,
    /// Residual evaluations over all starts.
    pub evals: usize,
    pub converged: bool,
    /// Index of the start that produced `params`.
    pub best_start: usize,
    /// Objective at each start point, in start order.
    pub start_objectives: Vec<f64>,
}

/// Model-minus-observed average price on the selected days, simulating from
/// `initial` under `params`.
pub fn model_residuals(
    params: &[ClusterParams],
    pop_template: &Population,
    initial: &MarketState,
    observed_means: &[f64],
    subsample: Option<&[usize]>,
    root_tol: f64,
) -> Result<Vec<f64>> {
    if observed_means.len() < 2 {
        return Err(Error::invalid("at least 2 observed averages are required"));
    }
    if let Some(k) = params.iter().position(ClusterParams::is_degenerate) {
        return Err(Error::DegenerateMode(format!(
            "cluster {k} has gamma = delta = 0; calibration needs the regular regime"
        )));
    }
    let pop = pop_template.with_clusters(params.to_vec())?;
    let gap = (observed_means[0] - initial.mean()).abs();
    if gap > 1e-9 * initial.mean().abs().max(1.0) {
        log::warn!("first observed average differs from the initial state's average by {gap:e}");
    }
    let all: Vec<usize>;
    let days = match subsample {
        Some(s) => {
            check_subsample(s, observed_means.len())?;
            s
        }
        None => {
            all = (0..observed_means.len()).collect();
            &all
        }
    };
    let horizon = *days.last().expect("subsample is non-empty");
    let means = if horizon == 0 {
        vec![initial.mean()]
    } else {
        simulate(&pop, initial, horizon, root_tol)?.means()
    };
    Ok(days.iter().map(|&d| means[d] - observed_means[d]).collect())
}

/// Population whose agents are the panel's stations, grouped by `labels`.
pub fn population_for_panel(
    panel: &PricePanel,
    labels: &[usize],
    clusters: Vec<ClusterParams>,
    sigmas: &[f64],
) -> Result<Population> {
    if labels.len() != panel.n_stations() || sigmas.len() != panel.n_stations() {
        return Err(Error::invalid(format!(
            "expected one label and one sigma per station ({}), got {} and {}",
            panel.n_stations(),
            labels.len(),
            sigmas.len()
        )));
    }
    let agents = panel
        .stations()
        .iter()
        .zip(labels.iter().zip(sigmas))
        .map(|(s, (&l, &sigma))| Agent::new(s.id.clone(), l, sigma))
        .collect::<Result<Vec<_>>>()?;
    Population::new(clusters, agents, Regime::Standard)
}

/// Fits one parameter tuple per cluster to the panel's daily average price.
///
/// The initial state is the panel's first day. Starts are the pinned start
/// (if any) followed by log-uniform draws from the box; each is refined by
/// box-constrained least squares and the lowest objective wins, ties going to
/// the earlier start.
pub fn fit(panel: &PricePanel, assignment: &ClusterAssignment, config: &FitConfig) -> Result<FitResult> {
    config.validate(panel.n_days())?;
    assignment.validate(panel.n_stations())?;
    let k = assignment.k;
    let sigmas = match &config.sigmas {
        Some(s) => s.clone(),
        None => estimate_sigmas(panel, config.sigma_fallback)?,
    };
    let placeholder = ClusterParams::new(config.lower, config.lower, config.lower, config.lower)?;
    let template = population_for_panel(panel, &assignment.labels, vec![placeholder; k], &sigmas)?;
    let initial = MarketState::new(panel.day(0))?;
    let observed = panel.daily_means();
    let subsample = config.subsample.as_deref();

    let dim = 4 * k;
    let lo = vec![config.lower; dim];
    let hi = vec![config.upper; dim];

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.multistart);
    if let Some(pinned) = &config.pinned_start {
        if pinned.len() != k {
            return Err(Error::invalid(format!(
                "pinned start has {} parameter sets, the assignment has {k} clusters",
                pinned.len()
            )));
        }
        starts.push(flatten_params(pinned));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (log_lo, log_hi) = (config.lower.ln(), config.upper.ln());
    while starts.len() < config.multistart {
        let draw = (0..dim)
            .map(|_| {
                if log_lo == log_hi {
                    config.lower
                } else {
                    rng.gen_range(log_lo..=log_hi).exp().clamp(config.lower, config.upper)
                }
            })
            .collect();
        starts.push(draw);
    }

    let residual = |flat: &[f64]| -> Result<Vec<f64>> {
        let params = unflatten_params(flat)?;
        model_residuals(&params, &template, &initial, &observed, subsample, config.root_tol)
    };
    let options = LeastSquaresOptions {
        max_evals: config.max_evals,
        ..LeastSquaresOptions::default()
    };
    let outcomes = starts
        .par_iter()
        .map(|x0| least_squares_box(residual, x0, &lo, &hi, &options))
        .collect::<Result<Vec<_>>>()?;

    let (best_start, best) = outcomes
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.cost.total_cmp(&b.cost).then(i.cmp(j)))
        .expect("at least one start");
    Ok(FitResult {
        params: unflatten_params(&best.x)?,
        objective: best.cost,
        residual_series: best.residuals.clone(),
        evals: outcomes.iter().map(|o| o.evals).sum(),
        converged: best.converged,
        best_start,
        start_objectives: outcomes.iter().map(|o| o.initial_cost).collect(),
    })
}
