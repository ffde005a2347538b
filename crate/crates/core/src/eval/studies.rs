use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use super::backtest::backtest;
use super::model::{Forecaster, Model};
use super::report::{compare_series, mse_excluding, ModelReport, Summary};
use crate::error::{Error, Result};
use crate::linear::WindowConfig;
use crate::lstm::{self, LstmConfig, LstmEnsemble, SampleSet};
use crate::panel::{DailyPanel, DateRange};
use crate::qrh::{forecast_blend, BlendConfig};
use crate::series::{ForecastEntry, ForecastSeries};

type SeriesMap = BTreeMap<String, ForecastSeries>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCell {
    /// Group whose data trained the model.
    pub model_group: String,
    /// Group whose assets were evaluated.
    pub eval_group: String,
    pub n_assets: usize,
    pub median_ratio: f64,
    pub aggregate_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub universal_id: String,
    pub cells: Vec<GroupCell>,
    /// Whether each group model beats the universal model (median ratio
    /// below one) on its own group.
    pub own_group_wins: BTreeMap<String, bool>,
}

/// MSE ratios of every group model against the universal model, split by
/// the panel's group labels.
pub fn group_comparison(
    universal: &dyn Forecaster,
    group_models: &[(String, &dyn Forecaster)],
    panel: &DailyPanel,
    window: &WindowConfig,
    period: Option<DateRange>,
    exclusions: &[DateRange],
) -> Result<GroupComparison> {
    let groups = panel.groups();
    if groups.is_empty() {
        return Err(Error::InvalidInput("panel has no group labels".into()));
    }
    let base = backtest(universal, panel, window, period)?;
    let mut cells = Vec::new();
    let mut own_group_wins = BTreeMap::new();
    for (label, model) in group_models {
        let out = backtest(*model, panel, window, period)?;
        let report = compare_series(&out.model_id, &out.series, &base.series, exclusions, groups)?;
        let mut by_group: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
        for a in &report.per_asset {
            if let Some(g) = &a.group {
                by_group.entry(g).or_default().push((a.ratio, a.mse, a.mse_baseline));
            }
        }
        for (g, rows) in by_group {
            let ratios: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let median = Summary::of(&ratios).expect("non-empty").median;
            let agg = rows.iter().map(|r| r.1).sum::<f64>() / rows.iter().map(|r| r.2).sum::<f64>();
            if g == label {
                own_group_wins.insert(label.clone(), median < 1.0);
            }
            cells.push(GroupCell {
                model_group: label.clone(),
                eval_group: g.to_string(),
                n_assets: rows.len(),
                median_ratio: median,
                aggregate_ratio: agg,
            });
        }
    }
    Ok(GroupComparison {
        universal_id: base.model_id,
        cells,
        own_group_wins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainSchedule {
    pub retrain_dates: Vec<NaiveDate>,
    #[serde(default = "six")]
    pub lookback_years: u32,
}

fn six() -> u32 {
    6
}

impl RetrainSchedule {
    pub fn validate(&self, period: DateRange) -> Result<()> {
        if self.retrain_dates.is_empty() {
            return Err(Error::InvalidParameter("schedule has no retrain dates".into()));
        }
        if self.retrain_dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::UnsortedInput("retrain dates must increase".into()));
        }
        if let Some(d) = self.retrain_dates.iter().find(|d| !period.contains(**d)) {
            return Err(Error::InvalidParameter(format!("retrain date {d} is outside the evaluation period")));
        }
        if self.lookback_years == 0 {
            return Err(Error::InvalidParameter("lookback_years must be positive".into()));
        }
        Ok(())
    }

    /// January 1st of every year from `period.start`'s year through `period.end`.
    pub fn yearly(period: DateRange, lookback_years: u32) -> Self {
        let dates = (period.start.year()..=period.end.year())
            .filter_map(|y| NaiveDate::from_ymd_opt(y, 1, 1))
            .map(|d| d.max(period.start))
            .filter(|d| period.contains(*d))
            .collect::<Vec<_>>();
        let mut retrain_dates = dates;
        retrain_dates.dedup();
        Self {
            retrain_dates,
            lookback_years,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainSegment {
    pub retrain_date: NaiveDate,
    pub train_range: DateRange,
    pub forecast_range: DateRange,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearRatio {
    pub year: i32,
    pub summary: Summary,
    pub aggregate_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicReport {
    pub segments: Vec<RetrainSegment>,
    /// Dynamic over static MSE ratios per calendar year.
    pub yearly: Vec<YearRatio>,
    pub overall: ModelReport,
}

/// Retrains an ensemble at every schedule date on the preceding lookback
/// window and uses it until the next retrain date; compares the result with
/// a single static ensemble over the same dates.
pub fn dynamic_eval(
    schedule: &RetrainSchedule,
    panel: &DailyPanel,
    config: &LstmConfig,
    static_model: Arc<LstmEnsemble>,
    period: DateRange,
    exclusions: &[DateRange],
) -> Result<DynamicReport> {
    schedule.validate(period)?;
    panel.require_scaled()?;
    let window = WindowConfig {
        window_len: config.seq_len.max(static_model.config.seq_len),
        refit_every: 1,
    };
    let mut segments = Vec::new();
    let mut dynamic: SeriesMap = BTreeMap::new();
    for (k, &d) in schedule.retrain_dates.iter().enumerate() {
        let end = match schedule.retrain_dates.get(k + 1) {
            Some(next) => next.pred_opt().expect("date underflow"),
            None => period.end,
        };
        let forecast_range = DateRange::new(d, end)?;
        let train_start = d
            .checked_sub_months(Months::new(12 * schedule.lookback_years))
            .ok_or_else(|| Error::InvalidParameter("lookback reaches before the calendar".into()))?;
        let train_range = DateRange::new(train_start, d.pred_opt().expect("date underflow"))?;
        let (ens, report) = lstm::train(panel, config, Some(train_range), None)?;
        log::info!("dynamic_retrain date={d} samples={}", report.n_samples);
        segments.push(RetrainSegment {
            retrain_date: d,
            train_range,
            forecast_range,
            n_samples: report.n_samples,
        });
        let model = Model::Lstm {
            name: format!("dynamic_{d}"),
            ensemble: Arc::new(ens),
        };
        let out = backtest(&model, panel, &window, Some(forecast_range))?;
        for (id, s) in out.series {
            dynamic.entry(id.clone()).or_insert_with(|| ForecastSeries {
                asset_id: id,
                entries: Vec::new(),
            })
            .entries
            .extend(s.entries);
        }
    }
    let covered = DateRange::new(schedule.retrain_dates[0], period.end)?;
    let static_m = Model::Lstm {
        name: "static".into(),
        ensemble: static_model,
    };
    let stat = backtest(&static_m, panel, &window, Some(covered))?.series;
    let overall = compare_series("lstm_dynamic", &dynamic, &stat, exclusions, panel.groups())?;

    let mut yearly = Vec::new();
    for year in covered.start.year()..=covered.end.year() {
        let in_year = |s: &ForecastSeries| s.retain(|d| d.year() == year);
        let (mut ratios, mut num, mut den) = (Vec::new(), 0.0, 0.0);
        for (id, s) in &dynamic {
            let Some(b) = stat.get(id) else { continue };
            if let (Ok(m), Ok(mb)) = (mse_excluding(&in_year(s), exclusions), mse_excluding(&in_year(b), exclusions)) {
                ratios.push(m / mb);
                num += m;
                den += mb;
            }
        }
        if let Some(summary) = Summary::of(&ratios) {
            yearly.push(YearRatio {
                year,
                summary,
                aggregate_ratio: num / den,
            });
        }
    }
    Ok(DynamicReport {
        segments,
        yearly,
        overall,
    })
}

/// Per-asset blend `(1 - λ) rfsv + λ qrh` over matching dates.
pub fn blend_series(rfsv: &SeriesMap, qrh: &SeriesMap, lambda: f64) -> Result<SeriesMap> {
    let blend = BlendConfig::new(lambda)?;
    let mut out = BTreeMap::new();
    for (id, r) in rfsv {
        let Some(q) = qrh.get(id) else { continue };
        if !r.dates().eq(q.dates()) {
            return Err(Error::DateSetMismatch(format!("RFSV and QRH forecasts differ in dates for {id}")));
        }
        let entries = r
            .entries
            .iter()
            .zip(&q.entries)
            .map(|(a, b)| ForecastEntry {
                date: a.date,
                predicted: forecast_blend(a.predicted, b.predicted, blend),
                realized: a.realized,
            })
            .collect();
        out.insert(id.clone(), ForecastSeries::new(id.clone(), entries)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub summary: Summary,
    pub aggregate_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub points: Vec<LambdaPoint>,
    /// Grid value with the lowest median ratio (first on ties).
    pub best_lambda: f64,
}

/// Ratio distribution of the blended forecast against `reference` for each
/// `λ` in the grid.
pub fn lambda_sweep(
    rfsv: &SeriesMap,
    qrh: &SeriesMap,
    lambdas: &[f64],
    reference: &SeriesMap,
    exclusions: &[DateRange],
) -> Result<LambdaSweep> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let blended = blend_series(rfsv, qrh, lambda)?;
        let r = compare_series(&format!("blend_{lambda}"), &blended, reference, exclusions, &BTreeMap::new())?;
        let summary = r.summary.ok_or(Error::NoData)?;
        points.push(LambdaPoint {
            lambda,
            summary,
            aggregate_ratio: r.aggregate_ratio.unwrap_or(f64::NAN),
        });
    }
    let best = points
        .iter()
        .fold(None::<&LambdaPoint>, |best, p| match best {
            Some(b) if b.summary.median <= p.summary.median => Some(b),
            _ => Some(p),
        })
        .expect("non-empty");
    Ok(LambdaSweep {
        best_lambda: best.lambda,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqLenPoint {
    pub seq_len: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains one ensemble per sequence length and reports pooled in-sample and
/// out-of-sample MSE.
pub fn seq_len_study(
    panel: &DailyPanel,
    base: &LstmConfig,
    seq_lens: &[usize],
    train_range: DateRange,
    test_range: DateRange,
) -> Result<Vec<SeqLenPoint>> {
    panel.require_scaled()?;
    let mut out = Vec::with_capacity(seq_lens.len());
    for &seq_len in seq_lens {
        let cfg = LstmConfig {
            seq_len,
            ..base.clone()
        };
        let train = SampleSet::from_panel(panel, &cfg, Some(train_range))?;
        let test = SampleSet::from_panel(panel, &cfg, Some(test_range))?;
        let (ens, _) = lstm::train_on_samples(&train, &cfg)?;
        let point = SeqLenPoint {
            seq_len,
            train_mse: ens.mse(&train)?,
            test_mse: ens.mse(&test)?,
            n_train: train.len(),
            n_test: test.len(),
        };
        log::info!(
            "seq_len_study seq_len={seq_len} train_mse={} test_mse={}",
            point.train_mse,
            point.test_mse
        );
        out.push(point);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(id: &str, pairs: &[(f64, f64)]) -> SeriesMap {
        let dates = crate::simulate::business_days(crate::simulate::default_start_date(), pairs.len());
        let entries = pairs
            .iter()
            .zip(dates)
            .map(|(&(predicted, realized), date)| ForecastEntry {
                date,
                predicted,
                realized,
            })
            .collect();
        [(id.to_string(), ForecastSeries::new(id, entries).unwrap())].into()
    }

    #[test]
    fn lambda_grid_endpoints_reproduce_pure_models() {
        let rfsv = map("a", &[(1.0, 1.2), (0.9, 0.8), (1.1, 1.0)]);
        let qrh = map("a", &[(1.3, 1.2), (0.7, 0.8), (1.0, 1.0)]);
        let reference = map("a", &[(1.1, 1.2), (1.0, 0.8), (1.2, 1.0)]);
        let sweep = lambda_sweep(&rfsv, &qrh, &[0.0, 1.0], &reference, &[]).unwrap();
        let pure = |m: &SeriesMap| compare_series("x", m, &reference, &[], &BTreeMap::new()).unwrap().summary.unwrap().median;
        assert_eq!(sweep.points[0].summary.median, pure(&rfsv));
        assert_eq!(sweep.points[1].summary.median, pure(&qrh));

        let half = blend_series(&rfsv, &qrh, 0.5).unwrap();
        let self_ref = lambda_sweep(&rfsv, &qrh, &[0.5], &half, &[]).unwrap();
        assert_eq!(self_ref.points[0].summary.median, 1.0);
    }

    #[test]
    fn schedule_validation() {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let period = DateRange::new(d(2016, 1, 1), d(2019, 12, 31)).unwrap();
        let s = RetrainSchedule::yearly(period, 6);
        assert_eq!(s.retrain_dates, vec![d(2016, 1, 1), d(2017, 1, 1), d(2018, 1, 1), d(2019, 1, 1)]);
        assert!(s.validate(period).is_ok());
        let bad = RetrainSchedule {
            retrain_dates: vec![d(2015, 1, 1)],
            lookback_years: 6,
        };
        assert!(bad.validate(period).is_err());
    }
}
