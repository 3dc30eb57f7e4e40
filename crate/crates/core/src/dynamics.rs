//! Best replies, the daily transition map, its contraction certificate and
//! the mean-field equilibrium.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{phi_prime_unchecked, phi_second_unchecked, ClusterParams, MarketState, Population, Regime};
use crate::numerics::{find_root_newton, norm_cdf, norm_pdf, std_normal_quantile, Bracket, FRAC_1_SQRT_2PI};

/// Populations at least this large evaluate best replies on the rayon pool.
const PARALLEL_THRESHOLD: usize = 512;

/// Price minimising the expected cost for tomorrow.
///
/// With `gamma + delta > 0` this is the unique zero of `phi'`, which always
/// lies in `[(gamma p_prev - beta) / (gamma + delta), (gamma p_prev + alpha) / (gamma + delta)]`
/// because `-alpha <= phi'(p) - (gamma + delta) p + gamma p_prev <= beta`.
/// With `gamma = delta = 0` the zero is `p_bar + sigma N^-1(alpha / (alpha + beta))`.
pub fn best_reply(params: &ClusterParams, sigma: f64, p_bar: f64, p_prev: f64, tol: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be finite and > 0, got {sigma}")));
    }
    if !(p_bar.is_finite() && p_prev.is_finite()) {
        return Err(Error::invalid("prices must be finite"));
    }
    if params.is_degenerate() {
        return Ok(p_bar + sigma * degenerate_offset(params)?);
    }
    let stiffness = params.gamma + params.delta;
    let lo = (params.gamma * p_prev - params.beta) / stiffness;
    let hi = (params.gamma * p_prev + params.alpha) / stiffness;
    let bracket = Bracket::new(lo, hi)?;
    let start = p_prev.clamp(lo, hi);
    find_root_newton(
        |p| {
            (
                phi_prime_unchecked(params, sigma, p_bar, p_prev, p),
                phi_second_unchecked(params, sigma, p_bar, p),
            )
        },
        bracket,
        tol,
        Some(start),
    )
    .or_else(|e| match e {
        // The endpoints bound the root exactly; a wrong sign there is rounding
        // in phi' and places the root at that endpoint.
        Error::Bracket { f_hi, .. } if f_hi < 0.0 => Ok(hi),
        Error::Bracket { f_lo, .. } if f_lo > 0.0 => Ok(lo),
        Error::Bracket { .. } => Err(Error::Internal(format!(
            "best-reply bracket does not enclose the root: {e}"
        ))),
        other => Err(other),
    })
}

/// `N^-1(alpha / (alpha + beta))`: the standardised offset of every best reply
/// from the average when `gamma = delta = 0`.
pub fn degenerate_offset(params: &ClusterParams) -> Result<f64> {
    std_normal_quantile(params.alpha / (params.alpha + params.beta))
}

/// Day-to-day change of the average price in the degenerate regime,
/// `(1/m) sum_i sigma_i N^-1(alpha_i / (alpha_i + beta_i))`. It does not
/// depend on the state, so the average drifts linearly unless it is zero.
pub fn degenerate_mean_drift(pop: &Population) -> Result<f64> {
    if pop.regime() != Regime::Degenerate {
        return Err(Error::invalid("mean drift is only constant in the degenerate regime"));
    }
    let mut total = 0.0;
    for a in pop.agents() {
        total += a.sigma * degenerate_offset(&pop.clusters()[a.cluster])?;
    }
    Ok(total / pop.len() as f64)
}

fn check_state(pop: &Population, state: &MarketState) -> Result<()> {
    if state.len() != pop.len() {
        return Err(Error::invalid(format!(
            "state has {} prices but the population has {} agents",
            state.len(),
            pop.len()
        )));
    }
    Ok(())
}

/// One day of the game: every agent best-replies to today's average and its
/// own current price, simultaneously.
pub fn transition_map(pop: &Population, state: &MarketState, tol: f64) -> Result<MarketState> {
    check_state(pop, state)?;
    let p_bar = state.mean();
    let reply = |(agent, &p_prev): (&crate::model::Agent, &f64)| {
        best_reply(&pop.clusters()[agent.cluster], agent.sigma, p_bar, p_prev, tol)
    };
    let next: Result<Vec<f64>> = if pop.len() >= PARALLEL_THRESHOLD {
        pop.agents()
            .par_iter()
            .zip(state.prices().par_iter())
            .map(reply)
            .collect()
    } else {
        pop.agents().iter().zip(state.prices()).map(reply).collect()
    };
    MarketState::new(next?)
}

/// Daily states starting from the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<MarketState>,
}

impl Trajectory {
    pub fn states(&self) -> &[MarketState] {
        &self.states
    }

    /// Average price per day.
    pub fn means(&self) -> Vec<f64> {
        self.states.iter().map(MarketState::mean).collect()
    }

    /// Number of simulated days (one less than the number of states).
    pub fn days(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &MarketState {
        self.states
            .last()
            .expect("a trajectory holds at least the initial state")
    }
}

pub fn simulate(pop: &Population, initial: &MarketState, days: usize, tol: f64) -> Result<Trajectory> {
    if days == 0 {
        return Err(Error::invalid("days must be at least 1"));
    }
    check_state(pop, initial)?;
    let mut states = Vec::with_capacity(days + 1);
    states.push(initial.clone());
    for _ in 0..days {
        let next = transition_map(pop, states.last().expect("non-empty"), tol)?;
        states.push(next);
    }
    Ok(Trajectory { states })
}

/// Row `agent` of the Jacobian of the transition map at `state`, given the
/// already computed next prices.
pub fn jacobian_row(pop: &Population, state: &MarketState, next_prices: &[f64], agent: usize) -> Result<Vec<f64>> {
    check_state(pop, state)?;
    if next_prices.len() != pop.len() {
        return Err(Error::invalid("next_prices length does not match the population"));
    }
    if agent >= pop.len() {
        return Err(Error::invalid(format!(
            "agent index {agent} out of range for {} agents",
            pop.len()
        )));
    }
    let params = pop.params_of(agent);
    let sigma = pop.agents()[agent].sigma;
    let m = pop.len() as f64;
    let a = (params.alpha + params.beta) / sigma * norm_pdf((next_prices[agent] - state.mean()) / sigma);
    let denom = a + params.gamma + params.delta;
    let off = a / m / denom;
    let mut row = vec![off; pop.len()];
    row[agent] = (params.gamma + a / m) / denom;
    Ok(row)
}

/// Uniform bound on the infinity norm of the transition map's Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    /// `(alpha + beta) / (sigma sqrt(2 pi))` per agent: the largest value the
    /// curvature term can take.
    pub per_agent_a_max: Vec<f64>,
    #[serde(rename = "bound_L")]
    pub bound_l: f64,
    pub is_contraction: bool,
}

/// Row sums of the Jacobian equal `(gamma + A) / (A + gamma + delta)`, which
/// grows with `A`; evaluating at the largest `A` bounds every state at once.
pub fn contraction_bound(pop: &Population) -> Result<ContractionReport> {
    if let Some(k) = pop.clusters().iter().position(|c| !c.is_equilibrium_legal()) {
        return Err(Error::DegenerateMode(format!(
            "cluster {k} has delta = 0; the transition map has no uniform contraction bound"
        )));
    }
    let per_agent_a_max: Vec<f64> = pop
        .agents()
        .iter()
        .map(|a| {
            let c = &pop.clusters()[a.cluster];
            (c.alpha + c.beta) / a.sigma * FRAC_1_SQRT_2PI
        })
        .collect();
    let bound_l = pop
        .agents()
        .iter()
        .zip(&per_agent_a_max)
        .map(|(a, &amax)| {
            let c = &pop.clusters()[a.cluster];
            (c.gamma + amax) / (amax + c.gamma + c.delta)
        })
        .fold(0.0, f64::max);
    Ok(ContractionReport {
        per_agent_a_max,
        bound_l,
        is_contraction: bound_l < 1.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub prices: Vec<f64>,
    pub mean: f64,
    /// Applications of the transition map before stopping.
    pub iterations: usize,
    /// `||G(x) - x||_inf` at the returned point.
    pub residual: f64,
    /// A-posteriori bound `L / (1 - L) * last step` on the distance to the fixed point.
    pub error_bound: f64,
    pub bound: ContractionReport,
}

/// Fixed point of the transition map.
///
/// Every iteration applies the map once and stops once that step is at most
/// `tol (1 - L) / L`, so the a-posteriori bound `L / (1 - L) * step` on the
/// remaining error is at most `tol`. The threshold is floored at a few ulps of
/// the iterate: below that the map cannot be evaluated any closer and the
/// reported `error_bound` says so.
///
/// Between map applications a Newton step is taken on the equilibrium
/// equations `-alpha N(-z_i) + beta N(z_i) + delta x_i = 0`,
/// `z_i = (x_i - mean) / sigma_i`, and kept when it lowers their residual.
/// When `L` is close to one plain iteration would need millions of steps.
pub fn solve_equilibrium(
    pop: &Population,
    initial: &MarketState,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult> {
    solve_equilibrium_with_root_tol(pop, initial, tol, max_iter, crate::numerics::DEFAULT_ROOT_TOL)
}

pub fn solve_equilibrium_with_root_tol(
    pop: &Population,
    initial: &MarketState,
    tol: f64,
    max_iter: usize,
    root_tol: f64,
) -> Result<EquilibriumResult> {
    if pop.regime() == Regime::Degenerate {
        return Err(Error::DegenerateMode(degenerate_message(pop)));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    check_state(pop, initial)?;
    let bound = contraction_bound(pop)?;
    let l = bound.bound_l;
    let threshold = tol * (1.0 - l) / l;

    let mut x = initial.clone();
    for iteration in 1..=max_iter {
        let next = transition_map(pop, &x, root_tol)?;
        let step = sup_distance(next.prices(), x.prices());
        let floor = 8.0 * f64::EPSILON * sup_norm(next.prices()).max(1.0);
        x = next;
        if step > threshold.max(floor) && iteration < max_iter {
            if let Some(better) = newton_candidate(pop, &x) {
                x = better;
            }
            continue;
        }
        if step <= threshold.max(floor) {
            let check = transition_map(pop, &x, root_tol)?;
            let residual = sup_distance(check.prices(), x.prices());
            return Ok(EquilibriumResult {
                mean: x.mean(),
                prices: x.into_prices(),
                iterations: iteration,
                residual,
                error_bound: l / (1.0 - l) * step,
                bound,
            });
        }
        if iteration == max_iter {
            return Err(Error::Convergence {
                iterations: iteration,
                last_step: step,
                last_iterate: x.into_prices(),
            });
        }
    }
    Err(Error::invalid("max_iter must be at least 1"))
}

/// `H_i(x) = phi_i'(x_i)` with the average at `mean(x)` and the previous price
/// at `x_i`. Its zeros are exactly the fixed points of the transition map.
fn equilibrium_residual(pop: &Population, x: &[f64], mean: f64) -> Vec<f64> {
    x.iter()
        .zip(pop.agents())
        .map(|(&p, a)| {
            let c = &pop.clusters()[a.cluster];
            let z = (p - mean) / a.sigma;
            -c.alpha * norm_cdf(-z) + c.beta * norm_cdf(z) + c.delta * p
        })
        .collect()
}

/// Newton step on `H` from `state`, or `None` when it does not lower `max |H|`.
///
/// The Jacobian is `diag(A_i + delta_i) - A 1^T / m`, which Sherman-Morrison
/// inverts in linear time.
fn newton_candidate(pop: &Population, state: &MarketState) -> Option<MarketState> {
    let x = state.prices();
    let m = x.len() as f64;
    let h = equilibrium_residual(pop, x, state.mean());
    let mut d_inv_r = Vec::with_capacity(x.len());
    let mut d_inv_u = Vec::with_capacity(x.len());
    for ((&p, a), &hi) in x.iter().zip(pop.agents()).zip(&h) {
        let c = &pop.clusters()[a.cluster];
        let big_a = (c.alpha + c.beta) / a.sigma * norm_pdf((p - state.mean()) / a.sigma);
        let d = big_a + c.delta;
        d_inv_r.push(-hi / d);
        d_inv_u.push(big_a / d);
    }
    let denom = 1.0 - d_inv_u.iter().sum::<f64>() / m;
    if !(denom > 0.0) {
        return None;
    }
    let scale = d_inv_r.iter().sum::<f64>() / m / denom;
    let candidate: Vec<f64> = x
        .iter()
        .zip(d_inv_r.iter().zip(&d_inv_u))
        .map(|(&p, (&r, &u))| p + r + u * scale)
        .collect();
    let candidate = MarketState::new(candidate).ok()?;
    let before = sup_norm(&h);
    let after = sup_norm(&equilibrium_residual(pop, candidate.prices(), candidate.mean()));
    (after < before).then_some(candidate)
}

/// Explanation of why no equilibrium is computed for a degenerate population.
pub fn degenerate_message(pop: &Population) -> String {
    let asymmetric = pop.clusters().iter().any(|c| c.alpha != c.beta);
    if asymmetric {
        "with gamma = delta = 0 and alpha != beta the unregularized problem cannot admit an equilibrium: \
         the average price drifts by a constant amount every day"
            .to_string()
    } else {
        "with gamma = delta = 0 and alpha = beta every constant price vector is fixed; \
         the equilibrium is the current average and is not unique"
            .to_string()
    }
}

/// `(alpha - beta) / (2 delta)`: the equilibrium price of a single-cluster population.
pub fn closed_form_equilibrium(params: &ClusterParams) -> Result<f64> {
    if !(params.delta > 0.0) {
        return Err(Error::invalid(format!(
            "closed-form equilibrium requires delta > 0, got {}",
            params.delta
        )));
    }
    Ok((params.alpha - params.beta) / (2.0 * params.delta))
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}
