//! File formats.
//!
//! * Price panel: long CSV with header `station_id,date,price`, ISO dates.
//! * Model configuration: strict JSON, see [`ConfigDocument`].
//! * Trajectories: CSV `day,mean,p_1,...,p_m` with six decimals.
//! * Everything else: pretty-printed JSON.
//!
//! Writes go to a temporary sibling file that is renamed into place, so a
//! failed run never leaves a partial output behind.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calibration::{ClusterAssignment, FitResult, PricePanel, StationSeries};
use crate::dynamics::{EquilibriumResult, Trajectory};
use crate::error::{Error, Result};
use crate::model::{ClusterParams, Population, Regime};
use crate::numerics::DEFAULT_ROOT_TOL;

pub const PANEL_HEADER: [&str; 3] = ["station_id", "date", "price"];

/// Default tolerance of the equilibrium solver.
pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-10;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a file path"),
        )
    })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    if s.len() != 10 {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Reads a long-format price panel and pivots it to one series per station.
///
/// Stations keep their order of first appearance; dates are sorted. Every
/// station must have exactly one price on every date.
pub fn read_price_panel(path: &Path) -> Result<PricePanel> {
    let text = read_to_string(path)?;
    parse_price_panel(&text)
}

pub fn parse_price_panel(text: &str) -> Result<PricePanel> {
    let expected = PANEL_HEADER.join(",");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("cannot read header (expected `{expected}`): {e}")))?
        .clone();
    if header.iter().map(str::trim).ne(PANEL_HEADER) {
        return Err(Error::Format(format!(
            "expected header `{expected}`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut prices: HashMap<String, HashMap<String, f64>> = HashMap::new();
    let mut dates: BTreeSet<String> = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let station = record[0].trim();
        let date = record[1].trim();
        let raw_price = record[2].trim();
        if station.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty station_id".into(),
            });
        }
        if parse_date(date).is_none() {
            return Err(Error::Parse {
                line,
                message: format!("date `{date}` is not YYYY-MM-DD"),
            });
        }
        let price: f64 = raw_price.parse().map_err(|_| Error::Parse {
            line,
            message: format!("price `{raw_price}` is not a number"),
        })?;
        if !price.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("price `{raw_price}` is not finite"),
            });
        }
        let series = prices.entry(station.to_string()).or_insert_with(|| {
            order.push(station.to_string());
            HashMap::new()
        });
        if series.insert(date.to_string(), price).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate price for station `{station}` on {date}"),
            });
        }
        dates.insert(date.to_string());
    }
    if order.is_empty() {
        return Err(Error::Format("price panel has no data rows".into()));
    }

    let dates: Vec<String> = dates.into_iter().collect();
    let mut missing = Vec::new();
    for s in &order {
        for d in &dates {
            if !prices[s].contains_key(d) {
                missing.push((s.clone(), d.clone()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    let stations = order
        .into_iter()
        .map(|id| {
            let series = &prices[&id];
            let values = dates.iter().map(|d| series[d]).collect();
            StationSeries { id, prices: values }
        })
        .collect();
    PricePanel::new(stations, dates)
}

/// Long-format CSV with prices printed at full round-trip precision.
pub fn format_price_panel(panel: &PricePanel) -> String {
    let mut out = PANEL_HEADER.join(",");
    out.push('\n');
    for s in panel.stations() {
        for (d, p) in panel.dates().iter().zip(&s.prices) {
            out.push_str(&format!("{},{},{}\n", s.id, d, p));
        }
    }
    out
}

pub fn write_price_panel(panel: &PricePanel, path: &Path) -> Result<()> {
    write_atomic(path, format_price_panel(panel).as_bytes())
}

/// Cluster entry of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    /// One value for every agent.
    Scalar(f64),
    /// One value per agent, in cluster order.
    PerAgent(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub root_tol: f64,
    pub fixed_point_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            root_tol: DEFAULT_ROOT_TOL,
            fixed_point_tol: DEFAULT_FIXED_POINT_TOL,
        }
    }
}

/// JSON model configuration.
///
/// ```json
/// {
///   "clusters": [{"alpha": 3.0, "beta": 1.0, "gamma": 5.0, "delta": 1.0, "count": 4}],
///   "sigmas": 0.027,
///   "tolerances": {"root_tol": 1e-12, "fixed_point_tol": 1e-10},
///   "seed": 0,
///   "days": 77
/// }
/// ```
///
/// `delta` must be positive unless `"degenerate": true`, in which case every
/// cluster must have `gamma = delta = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub clusters: Vec<ClusterSpec>,
    pub sigmas: SigmaSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub days: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub root_tol: f64,
    pub fixed_point_tol: f64,
    pub seed: u64,
    pub days: Option<usize>,
}

impl ConfigDocument {
    pub fn into_population(self) -> Result<(Population, SolverSettings)> {
        if self.clusters.is_empty() {
            return Err(Error::validation("clusters", "at least one cluster is required"));
        }
        let regime = if self.degenerate {
            Regime::Degenerate
        } else {
            Regime::Standard
        };
        let mut params = Vec::with_capacity(self.clusters.len());
        for (k, c) in self.clusters.iter().enumerate() {
            let p = ClusterParams {
                alpha: c.alpha,
                beta: c.beta,
                gamma: c.gamma,
                delta: c.delta,
            };
            p.validate().map_err(|e| match e {
                Error::Validation { field, message } => Error::validation(format!("clusters[{k}].{field}"), message),
                other => other,
            })?;
            if !self.degenerate && p.delta <= 0.0 {
                return Err(Error::validation(
                    format!("clusters[{k}].delta"),
                    "must be > 0 (set \"degenerate\": true for the gamma = delta = 0 regime)",
                ));
            }
            params.push(p);
        }
        let counts: Vec<usize> = self.clusters.iter().map(|c| c.count).collect();
        let m: usize = counts.iter().sum();
        if m < 2 {
            return Err(Error::validation(
                "clusters.count",
                format!("counts must sum to at least 2, got {m}"),
            ));
        }
        let sigmas = match self.sigmas {
            SigmaSpec::Scalar(s) => vec![s; m],
            SigmaSpec::PerAgent(v) => {
                if v.len() != m {
                    return Err(Error::validation(
                        "sigmas",
                        format!("expected {m} values (one per agent), got {}", v.len()),
                    ));
                }
                v
            }
        };
        if let Some((i, s)) = sigmas.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::validation(
                format!("sigmas[{i}]"),
                format!("must be finite and > 0, got {s}"),
            ));
        }
        let tol = self.tolerances;
        if !(tol.root_tol > 0.0) {
            return Err(Error::validation("tolerances.root_tol", "must be > 0"));
        }
        if !(tol.fixed_point_tol > 0.0) {
            return Err(Error::validation("tolerances.fixed_point_tol", "must be > 0"));
        }
        let pop = Population::from_counts_with_sigmas(params, &counts, &sigmas, regime)?;
        Ok((
            pop,
            SolverSettings {
                root_tol: tol.root_tol,
                fixed_point_tol: tol.fixed_point_tol,
                seed: self.seed,
                days: self.days,
            },
        ))
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

pub fn parse_config(text: &str) -> Result<(Population, SolverSettings)> {
    let doc: ConfigDocument =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("invalid configuration: {e}")))?;
    doc.into_population()
}

pub fn read_config(path: &Path) -> Result<(Population, SolverSettings)> {
    let text = read_to_string(path)?;
    let doc: ConfigDocument = serde_json::from_str(&text).map_err(|e| json_error(path, e))?;
    doc.into_population()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

/// Initial prices: a JSON array of numbers, one per agent.
pub fn read_initial_prices(path: &Path) -> Result<Vec<f64>> {
    read_json(path)
}

pub fn read_cluster_assignment(path: &Path) -> Result<ClusterAssignment> {
    read_json(path)
}

/// Cluster parameters: a JSON array of `{alpha, beta, gamma, delta}` objects.
pub fn read_params(path: &Path) -> Result<Vec<ClusterParams>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Entry {
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
    }
    let entries: Vec<Entry> = read_json(path)?;
    entries
        .into_iter()
        .map(|e| ClusterParams::new(e.alpha, e.beta, e.gamma, e.delta))
        .collect()
}

/// Estimated noise scales per station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmasDocument {
    pub stations: Vec<String>,
    pub sigmas: Vec<f64>,
    pub fallback: f64,
}

pub fn read_sigmas(path: &Path) -> Result<SigmasDocument> {
    let doc: SigmasDocument = read_json(path)?;
    if doc.stations.len() != doc.sigmas.len() {
        return Err(Error::validation("sigmas", "one sigma per station is required"));
    }
    Ok(doc)
}

/// Serialised form of [`EquilibriumResult`] with the certificate flattened.
#[derive(Debug, Serialize)]
struct EquilibriumDocument<'a> {
    prices: &'a [f64],
    mean: f64,
    iterations: usize,
    residual: f64,
    error_bound: f64,
    #[serde(rename = "bound_L")]
    bound_l: f64,
    is_contraction: bool,
    #[serde(rename = "per_agent_A_max")]
    per_agent_a_max: &'a [f64],
}

/// Anything the command line writes out.
#[derive(Debug, Clone, Copy)]
pub enum ResultRef<'a> {
    Trajectory(&'a Trajectory),
    Equilibrium(&'a EquilibriumResult),
    Fit(&'a FitResult),
    Clusters(&'a ClusterAssignment),
    Sigmas(&'a SigmasDocument),
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Renders a result to the bytes [`write_results`] would write.
pub fn render_results(result: ResultRef<'_>) -> Result<String> {
    match result {
        ResultRef::Trajectory(t) => Ok(format_trajectory_csv(t)),
        ResultRef::Equilibrium(r) => to_json(&EquilibriumDocument {
            prices: &r.prices,
            mean: r.mean,
            iterations: r.iterations,
            residual: r.residual,
            error_bound: r.error_bound,
            bound_l: r.bound.bound_l,
            is_contraction: r.bound.is_contraction,
            per_agent_a_max: &r.bound.per_agent_a_max,
        }),
        ResultRef::Fit(r) => to_json(r),
        ResultRef::Clusters(a) => to_json(a),
        ResultRef::Sigmas(s) => to_json(s),
    }
}

pub fn write_results(result: ResultRef<'_>, path: &Path) -> Result<()> {
    write_atomic(path, render_results(result)?.as_bytes())
}

pub fn format_trajectory_csv(t: &Trajectory) -> String {
    let m = t.states()[0].len();
    let mut out = String::from("day,mean");
    for i in 1..=m {
        out.push_str(&format!(",p_{i}"));
    }
    out.push('\n');
    for (day, s) in t.states().iter().enumerate() {
        out.push_str(&format!("{day},{:.6}", s.mean()));
        for p in s.prices() {
            out.push_str(&format!(",{p:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Parsed trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub days: Vec<usize>,
    pub means: Vec<f64>,
    pub prices: Vec<Vec<f64>>,
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryTable> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "day" || &header[1] != "mean" {
        return Err(Error::Format("expected header `day,mean,p_1,...`".into()));
    }
    let mut table = TrajectoryTable {
        days: Vec::new(),
        means: Vec::new(),
        prices: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |field: &str| Error::Parse {
            line,
            message: format!("cannot parse `{field}`"),
        };
        table.days.push(record[0].parse().map_err(|_| bad(&record[0]))?);
        table.means.push(record[1].parse().map_err(|_| bad(&record[1]))?);
        table.prices.push(
            record
                .iter()
                .skip(2)
                .map(|v| v.parse().map_err(|_| bad(v)))
                .collect::<Result<_>>()?,
        );
    }
    Ok(table)
}

/// Plot-ready CSV `value,best_reply`.
pub fn format_sweep_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("value,best_reply\n");
    for (v, r) in rows {
        out.push_str(&format!("{v},{r}\n"));
    }
    out
}
