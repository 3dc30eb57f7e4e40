use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub id: String,
    /// One price per day, EUR/L.
    pub prices: Vec<f64>,
}

/// Daily prices of a set of stations over a common window of days.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    stations: Vec<StationSeries>,
    dates: Vec<String>,
}

impl PricePanel {
    pub fn new(stations: Vec<StationSeries>, dates: Vec<String>) -> Result<Self> {
        if dates.len() < 2 {
            return Err(Error::validation(
                "dates",
                format!("a panel needs at least 2 days, got {}", dates.len()),
            ));
        }
        if stations.is_empty() {
            return Err(Error::validation("stations", "a panel needs at least one station"));
        }
        for s in &stations {
            if s.prices.len() != dates.len() {
                return Err(Error::validation(
                    format!("stations[{}]", s.id),
                    format!(
                        "series has {} values but the panel has {} days",
                        s.prices.len(),
                        dates.len()
                    ),
                ));
            }
            if let Some(p) = s.prices.iter().find(|p| !p.is_finite()) {
                return Err(Error::validation(
                    format!("stations[{}]", s.id),
                    format!("non-finite price {p}"),
                ));
            }
        }
        let mut ids: Vec<&str> = stations.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation("stations", format!("duplicate station id {}", w[0])));
        }
        Ok(Self { stations, dates })
    }

    pub fn stations(&self) -> &[StationSeries] {
        &self.stations
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    /// Prices of every station on day `day`.
    pub fn day(&self, day: usize) -> Vec<f64> {
        self.stations.iter().map(|s| s.prices[day]).collect()
    }

    /// Cross-station average for every day.
    pub fn daily_means(&self) -> Vec<f64> {
        (0..self.n_days())
            .map(|d| self.stations.iter().map(|s| s.prices[d]).sum::<f64>() / self.n_stations() as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(id: &str, prices: &[f64]) -> StationSeries {
        StationSeries {
            id: id.into(),
            prices: prices.to_vec(),
        }
    }

    #[test]
    fn validation() {
        let dates = vec!["2023-01-01".to_string(), "2023-01-02".to_string()];
        assert!(PricePanel::new(vec![series("a", &[1.0])], dates.clone()).is_err());
        assert!(PricePanel::new(vec![series("a", &[1.0, f64::NAN])], dates.clone()).is_err());
        assert!(PricePanel::new(vec![series("a", &[1.0, 2.0]), series("a", &[1.0, 2.0])], dates.clone()).is_err());
        assert!(PricePanel::new(vec![series("a", &[1.0])], vec!["2023-01-01".into()]).is_err());
        let p = PricePanel::new(vec![series("a", &[1.0, 2.0]), series("b", &[3.0, 4.0])], dates).unwrap();
        assert_eq!(p.daily_means(), vec![2.0, 3.0]);
        assert_eq!(p.day(1), vec![2.0, 4.0]);
    }
}
