//! Fitting clustered model parameters to observed station prices.
//!
//! The pipeline is: estimate each station's forecast noise from the spread of
//! its own prices ([`estimate_sigmas`]), group stations with k-means on
//! standardised (mean, std) features ([`station_features`], [`kmeans`]), then
//! fit one `(alpha, beta, gamma, delta)` tuple per group by box-constrained
//! least squares on the daily average price ([`fit`]).

mod fit;
mod kmeans;
mod lsq;
mod panel;
mod stats;

pub use fit::{fit, model_residuals, population_for_panel, FitConfig, FitResult};
pub use kmeans::{kmeans, ClusterAssignment, MAX_CLUSTERS};
pub use lsq::{least_squares_box, LeastSquaresOptions, LeastSquaresOutcome};
pub use panel::{PricePanel, StationSeries};
pub use stats::{estimate_sigmas, sample_std, station_features, SIGMA_FALLBACK, SIGMA_FLOOR};
