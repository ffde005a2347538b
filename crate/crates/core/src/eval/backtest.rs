use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Forecaster, Predictor};
use crate::error::{Error, Result};
use crate::linear::WindowConfig;
use crate::panel::{DailyPanel, DailyRecord, DateRange};
use crate::series::{ForecastEntry, ForecastSeries};
use crate::simulate::rng_from_seed;

/// An asset that produced no forecasts, and why.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetIssue {
    pub asset_id: String,
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestOutput {
    pub model_id: String,
    pub series: BTreeMap<String, ForecastSeries>,
    pub skipped: Vec<AssetIssue>,
}

/// Index of the first forecast target: it needs `window_len` earlier records
/// and a date inside `period`.
fn first_target(records: &[DailyRecord], window: &WindowConfig, period: Option<DateRange>) -> Option<usize> {
    (window.window_len..records.len()).find(|&t| period.map_or(true, |p| p.contains(records[t].date)))
}

fn fit_index(t: usize, first: usize, window: &WindowConfig) -> usize {
    t - (t - first) % window.refit_every
}

/// Forecast for the record following `before`, reproducing exactly what the
/// backtest emits for that date. `first` is the backtest's first target
/// index for this asset.
pub fn forecast_next(
    model: &dyn Forecaster,
    before: &[DailyRecord],
    window: &WindowConfig,
    first: usize,
) -> Result<f64> {
    let t = before.len();
    if t < first || first < window.window_len {
        return Err(Error::InsufficientHistory(format!("target index {t} precedes first target {first}")));
    }
    let fit_at = if model.is_static() { first } else { fit_index(t, first, window) };
    let fitted = model.fit(&before[fit_at - window.window_len..fit_at])?;
    fitted.predict(&before[t - window.window_len..t])
}

fn backtest_asset(
    model: &dyn Forecaster,
    records: &[DailyRecord],
    window: &WindowConfig,
    period: Option<DateRange>,
) -> Result<Vec<ForecastEntry>> {
    let first = first_target(records, window, period).ok_or_else(|| {
        Error::InsufficientHistory(format!(
            "{} records cannot provide a {}-day window before the period",
            records.len(),
            window.window_len
        ))
    })?;
    let mut out = Vec::new();
    let mut fitted: Option<Box<dyn Predictor>> = None;
    for t in first..records.len() {
        if period.is_some_and(|p| !p.contains(records[t].date)) {
            break;
        }
        let refit = fitted.is_none() || (!model.is_static() && (t - first) % window.refit_every == 0);
        if refit {
            fitted = Some(model.fit(&records[t - window.window_len..t])?);
        }
        let predicted = fitted
            .as_ref()
            .expect("fitted above")
            .predict(&records[t - window.window_len..t])?;
        if !predicted.is_finite() {
            return Err(Error::NonFinite(format!("forecast for {} is {predicted}", records[t].date)));
        }
        out.push(ForecastEntry {
            date: records[t].date,
            predicted,
            realized: records[t].rv,
        });
    }
    Ok(out)
}

/// Out-of-sample forecasts for every asset and every target date in
/// `period`. Each forecast uses only records dated strictly before its
/// target; models are refit on the trailing `window_len` records every
/// `refit_every` targets (static models are fit once). Assets that fail are
/// skipped and reported.
pub fn backtest(
    model: &dyn Forecaster,
    panel: &DailyPanel,
    window: &WindowConfig,
    period: Option<DateRange>,
) -> Result<BacktestOutput> {
    window.validate(model.context_len())?;
    let model_id = model.id();
    let ids: Vec<&str> = panel.asset_ids().collect();
    let results: Vec<(String, Result<Vec<ForecastEntry>>)> = ids
        .par_iter()
        .map(|&id| {
            let recs = panel.records(id).unwrap_or_default();
            (id.to_string(), backtest_asset(model, recs, window, period))
        })
        .collect();
    let mut series = BTreeMap::new();
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(entries) => {
                series.insert(id.clone(), ForecastSeries::new(id, entries)?);
            }
            Err(e) => {
                log::warn!("backtest_skip model={model_id} asset={id} reason=\"{e}\"");
                skipped.push(AssetIssue {
                    asset_id: id,
                    model_id: model_id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(BacktestOutput {
        model_id,
        series,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditMismatch {
    pub asset_id: String,
    pub date: NaiveDate,
    pub emitted: f64,
    pub recomputed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub probes: usize,
    pub mismatches: Vec<AuditMismatch>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.probes > 0 && self.mismatches.is_empty()
    }
}

/// Re-derives randomly chosen forecasts from a copy of the panel truncated
/// just before each probe's date. Any difference means the forecast saw its
/// own target or later data.
pub fn audit_lookahead(
    model: &dyn Forecaster,
    panel: &DailyPanel,
    window: &WindowConfig,
    period: Option<DateRange>,
    output: &BacktestOutput,
    probes: usize,
    seed: u64,
) -> Result<AuditReport> {
    let assets: Vec<&ForecastSeries> = output.series.values().filter(|s| !s.is_empty()).collect();
    if assets.is_empty() {
        return Err(Error::NoData);
    }
    let mut rng = rng_from_seed(seed);
    let picks: Vec<(usize, usize)> = (0..probes)
        .map(|_| {
            let a = rng.random_range(0..assets.len());
            (a, rng.random_range(0..assets[a].len()))
        })
        .collect();
    let mismatches: Vec<AuditMismatch> = picks
        .par_iter()
        .filter_map(|&(a, k)| {
            let s = assets[a];
            let entry = s.entries[k];
            let truncated = panel.truncate_before(entry.date);
            let before = truncated.records(&s.asset_id).unwrap_or_default();
            let recomputed = first_target(before, window, period)
                // No earlier target: the probe is the asset's first forecast.
                .or(Some(before.len()))
                .and_then(|first| forecast_next(model, before, window, first).ok());
            let ok = recomputed.is_some_and(|v| v.to_bits() == entry.predicted.to_bits());
            (!ok).then(|| AuditMismatch {
                asset_id: s.asset_id.clone(),
                date: entry.date,
                emitted: entry.predicted,
                recomputed,
            })
        })
        .collect();
    Ok(AuditReport { probes, mismatches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::model::Model;

    fn panel(rv: impl Fn(usize, usize) -> f64, n: usize, assets: usize) -> DailyPanel {
        let dates = crate::simulate::business_days(crate::simulate::default_start_date(), n);
        let map = (0..assets)
            .map(|a| {
                let recs = dates
                    .iter()
                    .enumerate()
                    .map(|(i, &date)| DailyRecord {
                        date,
                        rv: rv(a, i),
                        ret: ((i * 7 + a) % 5) as f64 * 0.1 - 0.2,
                    })
                    .collect();
                (format!("A{a}"), recs)
            })
            .collect();
        DailyPanel::new(map, BTreeMap::new()).unwrap()
    }

    #[test]
    fn har_on_constant_panel_is_exact() {
        let p = panel(|_, _| 0.8, 200, 2);
        let w = WindowConfig { window_len: 100, refit_every: 1 };
        let out = backtest(&Model::Har, &p, &w, None).unwrap();
        assert_eq!(out.series.len(), 2);
        for s in out.series.values() {
            assert_eq!(s.len(), 100);
            assert!(s.entries.iter().all(|e| (e.predicted - 0.8).abs() < 1e-9));
        }
    }

    #[test]
    fn period_and_short_assets() {
        let p = panel(|a, i| 1.0 + 0.1 * ((i * (a + 3)) % 11) as f64, 300, 2);
        let short = panel(|_, i| 1.0 + 0.01 * i as f64, 80, 1);
        let renamed: BTreeMap<String, Vec<DailyRecord>> =
            short.iter().map(|(_, r)| ("SHORT".to_string(), r.to_vec())).collect();
        let p = p.merge(&DailyPanel::new(renamed, BTreeMap::new()).unwrap()).unwrap();
        let dates: Vec<NaiveDate> = p.records("A0").unwrap().iter().map(|r| r.date).collect();
        let period = DateRange::new(dates[150], dates[199]).unwrap();
        let w = WindowConfig { window_len: 100, refit_every: 7 };
        let out = backtest(&Model::Ar { p: 2 }, &p, &w, Some(period)).unwrap();
        assert_eq!(out.series["A0"].len(), 50);
        assert_eq!(out.series["A0"].entries[0].date, dates[150]);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].asset_id, "SHORT");

        let audit = audit_lookahead(&Model::Ar { p: 2 }, &p, &w, Some(period), &out, 40, 1).unwrap();
        assert!(audit.passed(), "{:?}", audit.mismatches);
    }

    #[test]
    fn window_must_cover_model_context() {
        let p = panel(|_, _| 1.0, 100, 1);
        let w = WindowConfig { window_len: 20, refit_every: 1 };
        assert!(backtest(&Model::Har, &p, &w, None).is_err());
    }

    #[test]
    fn audit_catches_forecasts_that_used_the_target() {
        let p = panel(|a, i| 1.0 + 0.05 * ((i * (a + 2)) % 13) as f64, 120, 2);
        let w = WindowConfig { window_len: 50, refit_every: 1 };
        let mut out = backtest(&Model::Har, &p, &w, None).unwrap();
        // What a harness that leaked the target into the input would emit.
        for s in out.series.values_mut() {
            s.entries.iter_mut().for_each(|e| e.predicted = 0.5 * (e.predicted + e.realized));
        }
        let audit = audit_lookahead(&Model::Har, &p, &w, None, &out, 30, 2).unwrap();
        assert!(!audit.passed());
        assert!(audit.mismatches.len() > 20);
    }
}
