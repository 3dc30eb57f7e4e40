//! Mean-field price game between petrol stations that react to a published
//! regional average price.
//!
//! Each station picks tomorrow's price by minimising an expected cost built
//! from four terms (undercutting, overpricing, price changes, absolute price)
//! against a noisy forecast of the average. The crate provides the closed-form
//! expected cost and its derivatives ([`model`]), best replies and the daily
//! transition map with its contraction certificate and equilibrium
//! ([`dynamics`]), and fitting of clustered parameters to observed average
//! price series ([`calibration`]). File formats live in [`io`].

pub mod calibration;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
