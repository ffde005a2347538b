use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backtest::{backtest, AssetIssue, BacktestOutput};
use super::model::Forecaster;
use crate::error::{Error, Result};
use crate::linear::WindowConfig;
use crate::panel::{DailyPanel, DateRange};
use crate::series::ForecastSeries;

/// `(1/T) Σ (σ̂_t - σ_t)²`.
pub fn mse(series: &ForecastSeries) -> Result<f64> {
    mse_excluding(series, &[])
}

/// MSE over the entries whose date falls in none of `exclusions`.
pub fn mse_excluding(series: &ForecastSeries, exclusions: &[DateRange]) -> Result<f64> {
    let mut n = 0usize;
    let mut sse = 0.0;
    for e in &series.entries {
        if exclusions.iter().any(|x| x.contains(e.date)) {
            continue;
        }
        let d = e.predicted - e.realized;
        sse += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoData);
    }
    Ok(sse / n as f64)
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Summary {
            n: v.len(),
            min: v[0],
            q25: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q75: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRatio {
    pub asset_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub n: usize,
    pub mse: f64,
    pub mse_baseline: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_id: String,
    pub per_asset: Vec<AssetRatio>,
    pub summary: Option<Summary>,
    /// Mean model MSE over mean baseline MSE across assets.
    pub aggregate_ratio: Option<f64>,
    pub groups: BTreeMap<String, Summary>,
}

/// Per-asset ratios `mse / mse_baseline` over identical date sets. Assets
/// missing from either side are skipped; differing dates are an error.
pub fn compare_series(
    model_id: &str,
    model: &BTreeMap<String, ForecastSeries>,
    baseline: &BTreeMap<String, ForecastSeries>,
    exclusions: &[DateRange],
    groups: &BTreeMap<String, String>,
) -> Result<ModelReport> {
    let mut per_asset = Vec::new();
    for (id, s) in model {
        let Some(b) = baseline.get(id) else { continue };
        if !s.dates().eq(b.dates()) {
            return Err(Error::DateSetMismatch(format!(
                "{model_id} and baseline forecast different dates for {id}"
            )));
        }
        let (m, mb) = match (mse_excluding(s, exclusions), mse_excluding(b, exclusions)) {
            (Ok(m), Ok(mb)) => (m, mb),
            _ => continue,
        };
        let n = s.entries.iter().filter(|e| !exclusions.iter().any(|x| x.contains(e.date))).count();
        per_asset.push(AssetRatio {
            asset_id: id.clone(),
            group: groups.get(id).cloned(),
            n,
            mse: m,
            mse_baseline: mb,
            ratio: m / mb,
        });
    }
    let ratios: Vec<f64> = per_asset.iter().map(|a| a.ratio).filter(|r| r.is_finite()).collect();
    let aggregate_ratio = (!per_asset.is_empty()).then(|| {
        let num: f64 = per_asset.iter().map(|a| a.mse).sum();
        let den: f64 = per_asset.iter().map(|a| a.mse_baseline).sum();
        num / den
    });
    let mut by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for a in &per_asset {
        if let Some(g) = &a.group {
            by_group.entry(g.clone()).or_default().push(a.ratio);
        }
    }
    Ok(ModelReport {
        model_id: model_id.to_string(),
        summary: Summary::of(&ratios),
        aggregate_ratio,
        groups: by_group.into_iter().filter_map(|(g, v)| Summary::of(&v).map(|s| (g, s))).collect(),
        per_asset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub baseline_id: String,
    pub model_ids: Vec<String>,
    pub window: WindowConfig,
    pub period: Option<DateRange>,
    pub exclusions: Vec<DateRange>,
}

impl ReportMeta {
    /// SHA-256 of the canonical JSON form of the metadata.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("metadata serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub config_hash: String,
    pub models: Vec<ModelReport>,
    pub skipped: Vec<AssetIssue>,
}

/// Backtests every model and the baseline on the same panel and reports
/// per-asset MSE ratios against the baseline.
pub fn relative_report(
    models: &[&dyn Forecaster],
    baseline: &dyn Forecaster,
    panel: &DailyPanel,
    window: &WindowConfig,
    period: Option<DateRange>,
    exclusions: &[DateRange],
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::InvalidInput("no models to evaluate".into()));
    }
    let base = backtest(baseline, panel, window, period)?;
    let outputs = models
        .iter()
        .map(|m| backtest(*m, panel, window, period))
        .collect::<Result<Vec<_>>>()?;
    report_from_outputs(&outputs, &base, panel, window, period, exclusions)
}

/// Assembles a report from backtests that were already run.
pub fn report_from_outputs(
    outputs: &[BacktestOutput],
    base: &BacktestOutput,
    panel: &DailyPanel,
    window: &WindowConfig,
    period: Option<DateRange>,
    exclusions: &[DateRange],
) -> Result<EvalReport> {
    let meta = ReportMeta {
        baseline_id: base.model_id.clone(),
        model_ids: outputs.iter().map(|o| o.model_id.clone()).collect(),
        window: *window,
        period,
        exclusions: exclusions.to_vec(),
    };
    let mut skipped = base.skipped.clone();
    let mut reports = Vec::with_capacity(outputs.len());
    for o in outputs {
        skipped.extend(o.skipped.iter().cloned());
        reports.push(compare_series(&o.model_id, &o.series, &base.series, exclusions, panel.groups())?);
    }
    skipped.sort();
    Ok(EvalReport {
        config_hash: meta.hash(),
        meta,
        models: reports,
        skipped,
    })
}

impl EvalReport {
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// One row per asset and model.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "asset", "group", "n", "mse", "mse_baseline", "ratio"])?;
        for m in &self.models {
            for a in &m.per_asset {
                w.write_record([
                    m.model_id.as_str(),
                    a.asset_id.as_str(),
                    a.group.as_deref().unwrap_or(""),
                    &a.n.to_string(),
                    &a.mse.to_string(),
                    &a.mse_baseline.to_string(),
                    &a.ratio.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes `<stem>.json` and `<stem>.csv` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let json = dir.join(format!("{stem}.json"));
        let f = std::fs::File::create(&json).map_err(|e| Error::io(&json, e))?;
        self.write_json(std::io::BufWriter::new(f))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::ForecastEntry;
    use chrono::NaiveDate;

    fn series(id: &str, pairs: &[(f64, f64)]) -> ForecastSeries {
        let dates = crate::simulate::business_days(crate::simulate::default_start_date(), pairs.len());
        ForecastSeries::new(
            id,
            pairs
                .iter()
                .zip(dates)
                .map(|(&(predicted, realized), date)| ForecastEntry {
                    date,
                    predicted,
                    realized,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&series("a", &[(1.0, 1.0), (2.0, 2.0)])).unwrap(), 0.0);
        assert_eq!(mse(&series("a", &[(0.0, 1.0); 4])).unwrap(), 1.0);
        assert_eq!(mse(&series("a", &[(0.5, 1.0), (1.5, 1.0)])).unwrap(), 0.25);
        assert!(matches!(mse(&series("a", &[])), Err(Error::NoData)));
    }

    #[test]
    fn exclusions_drop_dates() {
        let s = series("a", &[(0.0, 1.0), (0.0, 3.0), (0.0, 1.0)]);
        let d = s.entries[1].date;
        let ex = [DateRange::new(d, d).unwrap()];
        assert_eq!(mse_excluding(&s, &ex).unwrap(), 1.0);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn self_comparison_gives_unit_ratios_and_mismatch_is_an_error() {
        let a = series("x", &[(0.5, 1.0), (1.5, 1.2), (1.0, 0.7)]);
        let map: BTreeMap<String, ForecastSeries> = [("x".to_string(), a.clone())].into();
        let r = compare_series("m", &map, &map, &[], &BTreeMap::new()).unwrap();
        assert_eq!(r.per_asset[0].ratio, 1.0);
        assert_eq!(r.summary.unwrap().median, 1.0);
        assert_eq!(r.aggregate_ratio, Some(1.0));

        let mut shorter = a.clone();
        shorter.entries.pop();
        let other: BTreeMap<String, ForecastSeries> = [("x".to_string(), shorter)].into();
        assert!(matches!(
            compare_series("m", &other, &map, &[], &BTreeMap::new()),
            Err(Error::DateSetMismatch(_))
        ));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let meta = ReportMeta {
            baseline_id: "har".into(),
            model_ids: vec!["ar1".into()],
            window: WindowConfig::default(),
            period: None,
            exclusions: vec![DateRange::new(
                NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
                NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(),
            )
            .unwrap()],
        };
        assert_eq!(meta.hash(), meta.clone().hash());
        assert_eq!(meta.hash().len(), 64);
        let other = ReportMeta { model_ids: vec!["ar2".into()], ..meta.clone() };
        assert_ne!(meta.hash(), other.hash());
    }
}
