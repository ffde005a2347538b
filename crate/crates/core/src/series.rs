use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastEntry {
    pub date: NaiveDate,
    pub predicted: f64,
    pub realized: f64,
}

/// Out-of-sample forecasts for one asset, in date order. Every prediction
/// was made from data dated strictly before its own date.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub asset_id: String,
    pub entries: Vec<ForecastEntry>,
}

impl ForecastSeries {
    pub fn new(asset_id: impl Into<String>, entries: Vec<ForecastEntry>) -> Result<Self> {
        let asset_id = asset_id.into();
        for w in entries.windows(2) {
            if w[1].date <= w[0].date {
                return Err(Error::UnsortedInput(format!(
                    "{asset_id}: forecast dates {} and {} out of order",
                    w[0].date, w[1].date
                )));
            }
        }
        Ok(Self { asset_id, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.entries.iter().map(|e| e.date)
    }

    pub fn retain(&self, mut keep: impl FnMut(NaiveDate) -> bool) -> ForecastSeries {
        ForecastSeries {
            asset_id: self.asset_id.clone(),
            entries: self.entries.iter().copied().filter(|e| keep(e.date)).collect(),
        }
    }
}
