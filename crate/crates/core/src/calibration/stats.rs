use super::panel::PricePanel;
use crate::error::{Error, Result};

/// Noise scale used for stations whose prices barely move, EUR/L.
pub const SIGMA_FALLBACK: f64 = 0.027;

/// Sample standard deviations below this are replaced by the fallback.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Standard deviation with the `n - 1` denominator.
pub fn sample_std(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "sample standard deviation needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

/// Per-station forecast noise: the sample standard deviation of the
/// station's own prices, or `fallback` when that is below 1e-3.
pub fn estimate_sigmas(panel: &PricePanel, fallback: f64) -> Result<Vec<f64>> {
    if !(fallback > 0.0 && fallback.is_finite()) {
        return Err(Error::invalid(format!("fallback sigma must be > 0, got {fallback}")));
    }
    panel
        .stations()
        .iter()
        .map(|s| {
            let sd = sample_std(&s.prices)?;
            Ok(if sd < SIGMA_FLOOR { fallback } else { sd })
        })
        .collect()
}

/// `(mean, sample std)` per station, each column standardised across stations
/// to zero mean and unit (population) variance. Constant columns become zero.
pub fn station_features(panel: &PricePanel) -> Result<Vec<Vec<f64>>> {
    if panel.n_stations() < 2 {
        return Err(Error::invalid(format!(
            "clustering features need at least 2 stations, got {}",
            panel.n_stations()
        )));
    }
    let raw: Vec<[f64; 2]> = panel
        .stations()
        .iter()
        .map(|s| {
            let mean = s.prices.iter().sum::<f64>() / s.prices.len() as f64;
            Ok([mean, sample_std(&s.prices)?])
        })
        .collect::<Result<_>>()?;
    let m = raw.len() as f64;
    let mut out = vec![vec![0.0; 2]; raw.len()];
    for col in 0..2 {
        let mean = raw.iter().map(|r| r[col]).sum::<f64>() / m;
        let var = raw.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / m;
        let sd = var.sqrt();
        // Spread at rounding level counts as constant.
        if sd <= 1e-12 * mean.abs().max(1.0) {
            continue;
        }
        for (row, r) in out.iter_mut().zip(&raw) {
            row[col] = (r[col] - mean) / sd;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::StationSeries;
    use approx::assert_abs_diff_eq;

    fn panel(rows: &[(&str, &[f64])]) -> PricePanel {
        let n = rows[0].1.len();
        let dates = (0..n).map(|d| format!("2023-01-{:02}", d + 1)).collect();
        let stations = rows
            .iter()
            .map(|(id, p)| StationSeries {
                id: id.to_string(),
                prices: p.to_vec(),
            })
            .collect();
        PricePanel::new(stations, dates).unwrap()
    }

    #[test]
    fn sigmas_with_fallback() {
        let p = panel(&[("flat", &[1.85, 1.85, 1.85]), ("moving", &[1.8, 1.9, 2.0])]);
        let s = estimate_sigmas(&p, SIGMA_FALLBACK).unwrap();
        assert_eq!(s[0], 0.027);
        assert_abs_diff_eq!(s[1], 0.1, epsilon = 1e-12);
        assert!(estimate_sigmas(&p, 0.0).is_err());
    }

    #[test]
    fn features_of_identical_stations_are_zero() {
        let p = panel(&[("a", &[1.8, 1.9]), ("b", &[1.8, 1.9]), ("c", &[1.8, 1.9])]);
        for row in station_features(&p).unwrap() {
            assert_eq!(row, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn mirrored_stations() {
        let p = panel(&[("a", &[1.7, 1.7]), ("b", &[1.9, 1.9])]);
        let f = station_features(&p).unwrap();
        assert_abs_diff_eq!(f[0][0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1][0], 1.0, epsilon = 1e-12);
        assert_eq!(f[0][1], 0.0);
    }

    #[test]
    fn hand_computed_features() {
        // means 1.8, 1.9, 2.3; stds 0.1, 0.0, 0.2
        let p = panel(&[
            ("a", &[1.7, 1.8, 1.9]),
            ("b", &[1.9, 1.9, 1.9]),
            ("c", &[2.1, 2.3, 2.5]),
        ]);
        let f = station_features(&p).unwrap();
        let means = [1.8_f64, 1.9, 2.3];
        let stds = [0.1_f64, 0.0, 0.2];
        for (col, raw) in [means, stds].iter().enumerate() {
            let mu = raw.iter().sum::<f64>() / 3.0;
            let sd = (raw.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 3.0).sqrt();
            for i in 0..3 {
                assert_abs_diff_eq!(f[i][col], (raw[i] - mu) / sd, epsilon = 1e-9);
            }
        }
        assert!(station_features(&panel(&[("a", &[1.0, 2.0])])).is_err());
    }
}
