//! Domain types of the price game and the analytic expected-cost functions.
//!
//! An agent facing today's average `p_bar` and its own current price `p_prev`
//! pays, for tomorrow's price `p`,
//!
//! ```text
//! c = alpha [p_tilde - p]+ + beta [p - p_tilde]+ + gamma/2 (p - p_prev)^2 + delta/2 p^2
//! ```
//!
//! where `p_tilde = p_bar + sigma * eps` and `eps ~ N(0,1)`. The expectation over
//! `eps` is evaluated in closed form: with `z = (p - p_bar) / sigma`,
//! `E[p_tilde - p]+ = sigma (N'(z) - z (1 - N(z)))` and
//! `E[p - p_tilde]+ = sigma (N'(z) + z N(z))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm_cdf, norm_pdf};

/// Cost weights `(alpha, beta, gamma, delta)` shared by one cluster of stations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl ClusterParams {
    /// Validates `alpha, beta > 0` and `gamma, delta >= 0`. The all-zero
    /// `(gamma, delta)` pair is accepted here; whether it is allowed is decided
    /// by the [`Regime`] of the owning population.
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            gamma,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(name, format!("must be finite, got {v}")));
            }
        }
        if self.alpha <= 0.0 {
            return Err(Error::validation("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if self.beta <= 0.0 {
            return Err(Error::validation("beta", format!("must be > 0, got {}", self.beta)));
        }
        if self.gamma < 0.0 {
            return Err(Error::validation("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        if self.delta < 0.0 {
            return Err(Error::validation("delta", format!("must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }

    /// `gamma = delta = 0`: best replies have a closed form and no
    /// equilibrium exists unless `alpha = beta`.
    pub fn is_degenerate(&self) -> bool {
        self.gamma == 0.0 && self.delta == 0.0
    }

    /// `delta > 0` is what makes the transition map a uniform contraction.
    pub fn is_equilibrium_legal(&self) -> bool {
        self.delta > 0.0
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a, b, g, d] => Self::new(*a, *b, *g, *d),
            _ => Err(Error::invalid(format!(
                "a parameter 4-tuple needs 4 values, got {}",
                v.len()
            ))),
        }
    }
}

/// Flattens cluster parameters as `(alpha_1, beta_1, gamma_1, delta_1, alpha_2, ...)`.
pub fn flatten_params(params: &[ClusterParams]) -> Vec<f64> {
    params.iter().flat_map(|p| p.to_array()).collect()
}

/// Inverse of [`flatten_params`].
pub fn unflatten_params(flat: &[f64]) -> Result<Vec<ClusterParams>> {
    if flat.len() % 4 != 0 || flat.is_empty() {
        return Err(Error::invalid(format!(
            "flat parameter vector length must be a positive multiple of 4, got {}",
            flat.len()
        )));
    }
    flat.chunks(4).map(ClusterParams::from_slice).collect()
}

/// One petrol station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub cluster: usize,
    /// Scale of the agent's error when forecasting tomorrow's average, EUR/L.
    pub sigma: f64,
}

impl Agent {
    pub fn new(id: impl Into<String>, cluster: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::validation(
                "sigma",
                format!("must be finite and > 0, got {sigma}"),
            ));
        }
        Ok(Self {
            id: id.into(),
            cluster,
            sigma,
        })
    }
}

/// Whether the population runs with the stabilising cost terms or without.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every cluster has `gamma + delta > 0`.
    #[default]
    Standard,
    /// Every cluster has `gamma = delta = 0`.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    clusters: Vec<ClusterParams>,
    agents: Vec<Agent>,
    regime: Regime,
}

impl Population {
    pub fn new(clusters: Vec<ClusterParams>, agents: Vec<Agent>, regime: Regime) -> Result<Self> {
        if agents.len() < 2 {
            return Err(Error::validation(
                "agents",
                format!("a population needs at least 2 agents, got {}", agents.len()),
            ));
        }
        if clusters.is_empty() {
            return Err(Error::validation("clusters", "at least one cluster is required"));
        }
        for (k, c) in clusters.iter().enumerate() {
            c.validate().map_err(|e| match e {
                Error::Validation { field, message } => Error::validation(format!("clusters[{k}].{field}"), message),
                other => other,
            })?;
            match regime {
                Regime::Standard if c.is_degenerate() => {
                    return Err(Error::validation(
                        format!("clusters[{k}]"),
                        "gamma = delta = 0 requires the degenerate regime",
                    ))
                }
                Regime::Degenerate if !c.is_degenerate() => {
                    return Err(Error::validation(
                        format!("clusters[{k}]"),
                        "the degenerate regime requires gamma = delta = 0 in every cluster",
                    ))
                }
                _ => {}
            }
        }
        for (i, a) in agents.iter().enumerate() {
            if a.cluster >= clusters.len() {
                return Err(Error::validation(
                    format!("agents[{i}].cluster"),
                    format!("index {} out of range for {} clusters", a.cluster, clusters.len()),
                ));
            }
            if !(a.sigma > 0.0 && a.sigma.is_finite()) {
                return Err(Error::validation(
                    format!("agents[{i}].sigma"),
                    format!("must be finite and > 0, got {}", a.sigma),
                ));
            }
        }
        Ok(Self {
            clusters,
            agents,
            regime,
        })
    }

    /// `counts[k]` agents in cluster `k`, in cluster order, all sharing `sigma`.
    pub fn from_counts(clusters: Vec<ClusterParams>, counts: &[usize], sigma: f64, regime: Regime) -> Result<Self> {
        if counts.len() != clusters.len() {
            return Err(Error::validation("counts", "one count per cluster is required"));
        }
        let m: usize = counts.iter().sum();
        Self::from_counts_with_sigmas(clusters, counts, &vec![sigma; m], regime)
    }

    pub fn from_counts_with_sigmas(
        clusters: Vec<ClusterParams>,
        counts: &[usize],
        sigmas: &[f64],
        regime: Regime,
    ) -> Result<Self> {
        if counts.len() != clusters.len() {
            return Err(Error::validation("counts", "one count per cluster is required"));
        }
        let m: usize = counts.iter().sum();
        if sigmas.len() != m {
            return Err(Error::validation(
                "sigmas",
                format!("expected {m} values (one per agent), got {}", sigmas.len()),
            ));
        }
        let mut agents = Vec::with_capacity(m);
        for (k, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let i = agents.len();
                agents.push(Agent::new(format!("agent_{}", i + 1), k, sigmas[i])?);
            }
        }
        Self::new(clusters, agents, regime)
    }

    pub fn clusters(&self) -> &[ClusterParams] {
        &self.clusters
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn params_of(&self, agent: usize) -> &ClusterParams {
        &self.clusters[self.agents[agent].cluster]
    }

    /// Same agents with different cluster parameters; used by calibration.
    pub fn with_clusters(&self, clusters: Vec<ClusterParams>) -> Result<Self> {
        if clusters.len() != self.clusters.len() {
            return Err(Error::invalid(format!(
                "expected {} cluster parameter sets, got {}",
                self.clusters.len(),
                clusters.len()
            )));
        }
        Self::new(clusters, self.agents.clone(), self.regime)
    }

    /// Same agents with every sigma replaced.
    pub fn with_sigmas(&self, sigmas: &[f64]) -> Result<Self> {
        if sigmas.len() != self.agents.len() {
            return Err(Error::invalid("one sigma per agent is required"));
        }
        let agents = self
            .agents
            .iter()
            .zip(sigmas)
            .map(|(a, &s)| Agent::new(a.id.clone(), a.cluster, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.clusters.clone(), agents, self.regime)
    }
}

/// Prices of every agent on one day, EUR/L, together with their average.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    prices: Vec<f64>,
    mean: f64,
}

impl MarketState {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::invalid("a market state needs at least one price"));
        }
        if let Some((i, p)) = prices.iter().enumerate().find(|(_, p)| !p.is_finite()) {
            return Err(Error::validation(
                format!("prices[{i}]"),
                format!("must be finite, got {p}"),
            ));
        }
        let mean = prices.iter().sum::<f64>() / prices.len() as f64;
        Ok(Self { prices, mean })
    }

    /// Checks the length against a population as well.
    pub fn for_population(prices: Vec<f64>, pop: &Population) -> Result<Self> {
        if prices.len() != pop.len() {
            return Err(Error::invalid(format!(
                "state has {} prices but the population has {} agents",
                prices.len(),
                pop.len()
            )));
        }
        Self::new(prices)
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn into_prices(self) -> Vec<f64> {
        self.prices
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma must be finite and > 0, got {sigma}")))
    }
}

/// `alpha * max(p_tilde - p, 0)`: revenue lost by pricing below the average.
pub fn cost_competition(params: &ClusterParams, p_tilde: f64, p: f64) -> f64 {
    params.alpha * (p_tilde - p).max(0.0)
}

/// `beta * max(p - p_tilde, 0)`: customers lost by pricing above the average.
pub fn cost_fidelity(params: &ClusterParams, p_tilde: f64, p: f64) -> f64 {
    params.beta * (p - p_tilde).max(0.0)
}

pub fn cost_reputation(params: &ClusterParams, p_prev: f64, p: f64) -> f64 {
    0.5 * params.gamma * (p - p_prev).powi(2)
}

pub fn cost_absolute(params: &ClusterParams, p: f64) -> f64 {
    0.5 * params.delta * p * p
}

/// Realised cost for a known forecast `p_tilde`.
pub fn total_cost(params: &ClusterParams, p_tilde: f64, p_prev: f64, p: f64) -> f64 {
    cost_competition(params, p_tilde, p)
        + cost_fidelity(params, p_tilde, p)
        + cost_reputation(params, p_prev, p)
        + cost_absolute(params, p)
}

/// Expected cost `phi(p)` with the forecast noise integrated out.
pub fn expected_cost(params: &ClusterParams, sigma: f64, p_bar: f64, p_prev: f64, p: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(expected_cost_unchecked(params, sigma, p_bar, p_prev, p))
}

pub(crate) fn expected_cost_unchecked(params: &ClusterParams, sigma: f64, p_bar: f64, p_prev: f64, p: f64) -> f64 {
    let z = (p - p_bar) / sigma;
    let density = norm_pdf(z);
    // Upper and lower partial expectations of (eps - z), scaled by sigma.
    let above = sigma * (density - z * norm_cdf(-z));
    let below = sigma * (density + z * norm_cdf(z));
    params.alpha * above + params.beta * below + cost_reputation(params, p_prev, p) + cost_absolute(params, p)
}

/// `phi'(p) = -alpha (1 - N(z)) + beta N(z) + gamma (p - p_prev) + delta p`.
pub fn phi_prime(params: &ClusterParams, sigma: f64, p_bar: f64, p_prev: f64, p: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(phi_prime_unchecked(params, sigma, p_bar, p_prev, p))
}

#[inline]
pub(crate) fn phi_prime_unchecked(params: &ClusterParams, sigma: f64, p_bar: f64, p_prev: f64, p: f64) -> f64 {
    let z = (p - p_bar) / sigma;
    // 1 - N(z) is evaluated as N(-z) to keep precision in the upper tail.
    -params.alpha * norm_cdf(-z) + params.beta * norm_cdf(z) + params.gamma * (p - p_prev) + params.delta * p
}

/// `phi''(p) = (alpha + beta) / sigma * N'(z) + gamma + delta`.
pub fn phi_second(params: &ClusterParams, sigma: f64, p_bar: f64, p: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(phi_second_unchecked(params, sigma, p_bar, p))
}

#[inline]
pub(crate) fn phi_second_unchecked(params: &ClusterParams, sigma: f64, p_bar: f64, p: f64) -> f64 {
    let z = (p - p_bar) / sigma;
    (params.alpha + params.beta) / sigma * norm_pdf(z) + params.gamma + params.delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{quadrature_expectation, FRAC_1_SQRT_2PI};
    use approx::assert_abs_diff_eq;

    fn params(alpha: f64, beta: f64, gamma: f64, delta: f64) -> ClusterParams {
        ClusterParams::new(alpha, beta, gamma, delta).unwrap()
    }

    #[test]
    fn competition_cost() {
        assert_abs_diff_eq!(
            cost_competition(&params(2.0, 1.0, 1.0, 1.0), 1.9, 1.8),
            0.2,
            epsilon = 1e-12
        );
        assert_eq!(cost_competition(&params(7.0, 1.0, 1.0, 1.0), 1.8, 1.9), 0.0);
        assert_eq!(cost_competition(&params(1.0, 1.0, 1.0, 1.0), 0.0, -1.0), 1.0);
    }

    #[test]
    fn fidelity_cost() {
        assert_abs_diff_eq!(
            cost_fidelity(&params(1.0, 3.0, 1.0, 1.0), 1.8, 1.9),
            0.3,
            epsilon = 1e-12
        );
        assert_eq!(cost_fidelity(&params(1.0, 3.0, 1.0, 1.0), 1.9, 1.8), 0.0);
        assert_eq!(cost_fidelity(&params(1.0, 0.5, 1.0, 1.0), 2.0, 4.0), 1.0);
    }

    #[test]
    fn reputation_cost() {
        assert_eq!(cost_reputation(&params(1.0, 1.0, 2.0, 1.0), 1.3, 1.3), 0.0);
        assert_eq!(cost_reputation(&params(1.0, 1.0, 2.0, 1.0), 1.0, 2.0), 1.0);
        assert_eq!(cost_reputation(&params(1.0, 1.0, 4.0, 1.0), 0.0, 0.5), 0.5);
    }

    #[test]
    fn absolute_cost() {
        assert_eq!(cost_absolute(&params(1.0, 1.0, 1.0, 2.0), 0.0), 0.0);
        assert_abs_diff_eq!(cost_absolute(&params(1.0, 1.0, 1.0, 2.0), 1.8), 3.24, epsilon = 1e-12);
        assert_eq!(cost_absolute(&params(1.0, 1.0, 1.0, 1.0), -2.0), 2.0);
    }

    #[test]
    fn expected_cost_at_average_without_stabilisers() {
        let p = params(2.0, 3.0, 0.0, 0.0);
        let v = expected_cost(&p, 0.04, 1.8, 1.7, 1.8).unwrap();
        assert_abs_diff_eq!(v, 5.0 * 0.04 * FRAC_1_SQRT_2PI, epsilon = 1e-15);
    }

    #[test]
    fn expected_cost_matches_quadrature() {
        let p = params(3.912, 5.186, 2.021, 2.21);
        let (sigma, p_bar, p_prev) = (0.027, 1.82, 1.79);
        for &x in &[1.7, 1.81, 1.82, 1.85, 2.3] {
            let oracle = quadrature_expectation(|e| total_cost(&p, p_bar + sigma * e, p_prev, x), 1e-11).unwrap();
            let closed = expected_cost(&p, sigma, p_bar, p_prev, x).unwrap();
            assert_abs_diff_eq!(closed, oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn expected_cost_is_coercive() {
        let p = params(4.0, 1.0, 0.5, 0.3);
        let mut last = expected_cost(&p, 0.1, 1.0, 1.0, 60.0).unwrap();
        for k in 61..200 {
            let v = expected_cost(&p, 0.1, 1.0, 1.0, k as f64).unwrap();
            assert!(v > last);
            last = v;
        }
        let mut last = expected_cost(&p, 0.1, 1.0, 1.0, -60.0).unwrap();
        for k in 61..200 {
            let v = expected_cost(&p, 0.1, 1.0, 1.0, -(k as f64)).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn derivative_values() {
        assert_eq!(phi_prime(&params(2.0, 2.0, 1.0, 1.0), 0.3, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let v = phi_prime(&params(1.0, 1.0, 0.5, 0.5), 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        let v = phi_second(&params(1.0, 1.0, 0.0, 0.0), 1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(v, 2.0 * FRAC_1_SQRT_2PI, epsilon = 1e-15);
        let v = phi_second(&params(1.0, 1.0, 3.0, 2.0), 1.0, 0.0, 10.0).unwrap();
        assert_abs_diff_eq!(v, 5.0, epsilon = 1e-20);
    }

    #[test]
    fn derivative_at_average_is_exact() {
        let p = params(3.0, 7.0, 2.0, 0.5);
        let (p_bar, p_prev) = (1.9, 1.6);
        let expected = (p.beta - p.alpha) / 2.0 + p.gamma * (p_bar - p_prev) + p.delta * p_bar;
        assert_eq!(phi_prime(&p, 0.05, p_bar, p_prev, p_bar).unwrap(), expected);
    }

    #[test]
    fn sigma_must_be_positive() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        assert!(expected_cost(&p, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(phi_prime(&p, -1.0, 0.0, 0.0, 0.0).is_err());
        assert!(phi_second(&p, f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(ClusterParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(ClusterParams::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(ClusterParams::new(1.0, 1.0, -0.1, 1.0).is_err());
        assert!(ClusterParams::new(1.0, 1.0, 0.0, 0.0).unwrap().is_degenerate());
        assert!(!ClusterParams::new(1.0, 1.0, 1.0, 0.0).unwrap().is_equilibrium_legal());
    }

    #[test]
    fn population_regimes() {
        let degenerate = params(1.0, 2.0, 0.0, 0.0);
        let regular = params(1.0, 2.0, 1.0, 1.0);
        assert!(Population::from_counts(vec![degenerate], &[3], 0.02, Regime::Standard).is_err());
        assert!(Population::from_counts(vec![degenerate], &[3], 0.02, Regime::Degenerate).is_ok());
        assert!(Population::from_counts(vec![regular], &[3], 0.02, Regime::Degenerate).is_err());
        assert!(Population::from_counts(vec![regular], &[1], 0.02, Regime::Standard).is_err());
        let pop = Population::from_counts(vec![regular, regular], &[2, 3], 0.02, Regime::Standard).unwrap();
        assert_eq!(pop.len(), 5);
        assert_eq!(pop.agents()[4].cluster, 1);
        let bad = vec![Agent::new("a", 0, 0.1).unwrap(), Agent::new("b", 1, 0.1).unwrap()];
        assert!(Population::new(vec![regular], bad, Regime::Standard).is_err());
    }

    #[test]
    fn market_state_mean() {
        let s = MarketState::new(vec![1.8, 1.9, 2.0, 1.7]).unwrap();
        assert_abs_diff_eq!(s.mean(), 1.85, epsilon = 1e-15);
        assert!(MarketState::new(vec![]).is_err());
        assert!(MarketState::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn flat_layout() {
        let ps = vec![params(1.0, 2.0, 3.0, 4.0), params(5.0, 6.0, 7.0, 8.0)];
        let flat = flatten_params(&ps);
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(unflatten_params(&flat).unwrap(), ps);
        assert!(unflatten_params(&flat[..5]).is_err());
    }
}
