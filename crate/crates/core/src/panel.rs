//! Daily realized-volatility panels.
//!
//! Intraday bars are reduced to one realized volatility and one close-to-close
//! return per trading day. Panels hold those daily records for many assets,
//! optionally rescaled per asset so that the mean of `rv²` is one and returns
//! are standardized over a reference window.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of records an asset needs inside the scaling window.
pub const MIN_SCALING_RECORDS: usize = 30;

/// Default number of minutes removed at each end of the trading session.
pub const DEFAULT_TRIM_MINUTES: u32 = 30;

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::InvalidParameter(format!(
                "date range end {end} precedes start {start}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntradayBar {
    pub timestamp: NaiveDateTime,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntradaySeries {
    pub asset_id: String,
    pub bars: Vec<IntradayBar>,
}

impl IntradaySeries {
    pub fn new(asset_id: impl Into<String>, bars: Vec<IntradayBar>) -> Result<Self> {
        let series = Self {
            asset_id: asset_id.into(),
            bars,
        };
        series.validate()?;
        Ok(series)
    }

    fn validate(&self) -> Result<()> {
        if self.bars.is_empty() {
            return Err(Error::NoData);
        }
        for w in self.bars.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(Error::UnsortedInput(format!(
                    "{}: {} follows {}",
                    self.asset_id, w[1].timestamp, w[0].timestamp
                )));
            }
        }
        if let Some(bar) = self
            .bars
            .iter()
            .find(|b| !(b.price.is_finite() && b.price > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "{}: non-positive price {} at {}",
                self.asset_id, bar.price, bar.timestamp
            )));
        }
        Ok(())
    }

    /// Bars grouped by calendar day, in order.
    fn days(&self) -> Vec<(NaiveDate, &[IntradayBar])> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.bars.len() {
            if i == self.bars.len()
                || self.bars[i].timestamp.date() != self.bars[start].timestamp.date()
            {
                out.push((self.bars[start].timestamp.date(), &self.bars[start..i]));
                start = i;
            }
        }
        out
    }
}

/// A trading day left out of the realized-volatility output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OmittedDay {
    pub date: NaiveDate,
    pub bars_after_trim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvOutput {
    pub values: Vec<(NaiveDate, f64)>,
    pub omitted: Vec<OmittedDay>,
}

/// Daily realized volatility `sqrt(Σ r²)` from simple intraday returns.
///
/// The session of each day runs from its first to its last bar; bars within
/// `trim_minutes` of either end are discarded before returns are formed.
/// Days with fewer than three bars left are omitted and listed in the output.
pub fn compute_rv(series: &IntradaySeries, trim_minutes: u32) -> Result<RvOutput> {
    series.validate()?;
    let trim = chrono::Duration::minutes(i64::from(trim_minutes));
    let mut values = Vec::new();
    let mut omitted = Vec::new();
    for (date, bars) in series.days() {
        let open = bars[0].timestamp + trim;
        let close = bars[bars.len() - 1].timestamp - trim;
        let kept: Vec<f64> = bars
            .iter()
            .filter(|b| b.timestamp >= open && b.timestamp <= close)
            .map(|b| b.price)
            .collect();
        if kept.len() < 3 {
            omitted.push(OmittedDay {
                date,
                bars_after_trim: kept.len(),
            });
            continue;
        }
        let sum_sq: f64 = kept
            .windows(2)
            .map(|w| {
                let r = (w[1] - w[0]) / w[0];
                r * r
            })
            .sum();
        values.push((date, sum_sq.sqrt()));
    }
    Ok(RvOutput { values, omitted })
}

/// Close-to-close simple returns; the first day has no return and is dropped.
pub fn compute_daily_returns(series: &IntradaySeries) -> Result<Vec<(NaiveDate, f64)>> {
    series.validate()?;
    let closes: Vec<(NaiveDate, f64)> = series
        .days()
        .into_iter()
        .map(|(d, bars)| (d, bars[bars.len() - 1].price))
        .collect();
    if closes.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "{}: daily returns need at least two trading days",
            series.asset_id
        )));
    }
    Ok(closes
        .windows(2)
        .map(|w| (w[1].0, (w[1].1 - w[0].1) / w[0].1))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub rv: f64,
    pub ret: f64,
}

/// Per-asset affine scaling constants. Scaled values relate to raw ones by
/// `rv = rv_raw / rv_scale` and `ret = (ret_raw - ret_mean) / ret_std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingMeta {
    pub rv_scale: f64,
    pub ret_mean: f64,
    pub ret_std: f64,
}

impl ScalingMeta {
    pub const IDENTITY: ScalingMeta = ScalingMeta {
        rv_scale: 1.0,
        ret_mean: 0.0,
        ret_std: 1.0,
    };

    /// Constants equivalent to applying `self` first and then `next`.
    pub fn then(&self, next: &ScalingMeta) -> ScalingMeta {
        ScalingMeta {
            rv_scale: self.rv_scale * next.rv_scale,
            ret_mean: self.ret_mean + next.ret_mean * self.ret_std,
            ret_std: self.ret_std * next.ret_std,
        }
    }

    fn apply(&self, r: &DailyRecord) -> DailyRecord {
        DailyRecord {
            date: r.date,
            rv: r.rv / self.rv_scale,
            ret: (r.ret - self.ret_mean) / self.ret_std,
        }
    }

    fn invert(&self, r: &DailyRecord) -> DailyRecord {
        DailyRecord {
            date: r.date,
            rv: r.rv * self.rv_scale,
            ret: r.ret * self.ret_std + self.ret_mean,
        }
    }
}

/// Multi-asset daily panel. Immutable once built; every transformation
/// returns a new panel.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPanel {
    assets: BTreeMap<String, Vec<DailyRecord>>,
    groups: BTreeMap<String, String>,
    scaling: BTreeMap<String, ScalingMeta>,
    scaled: bool,
}

impl DailyPanel {
    /// Builds an unscaled panel after checking record invariants.
    pub fn new(
        assets: BTreeMap<String, Vec<DailyRecord>>,
        groups: BTreeMap<String, String>,
    ) -> Result<Self> {
        for (id, records) in &assets {
            validate_records(id, records)?;
        }
        let groups = groups
            .into_iter()
            .filter(|(id, _)| assets.contains_key(id))
            .collect();
        Ok(Self {
            assets,
            groups,
            scaling: BTreeMap::new(),
            scaled: false,
        })
    }

    /// Rebuilds a panel that was already scaled elsewhere (e.g. read back from disk).
    pub fn from_scaled_parts(
        assets: BTreeMap<String, Vec<DailyRecord>>,
        groups: BTreeMap<String, String>,
        scaling: BTreeMap<String, ScalingMeta>,
    ) -> Result<Self> {
        let mut panel = Self::new(assets, groups)?;
        for id in panel.assets.keys() {
            if !scaling.contains_key(id) {
                return Err(Error::ScalingMismatch(format!(
                    "asset {id} has no scaling constants"
                )));
            }
        }
        panel.scaling = scaling
            .into_iter()
            .filter(|(id, _)| panel.assets.contains_key(id))
            .collect();
        panel.scaled = true;
        Ok(panel)
    }

    pub fn is_scaled(&self) -> bool {
        self.scaled
    }

    pub fn asset_ids(&self) -> impl Iterator<Item = &str> {
        self.assets.keys().map(String::as_str)
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn records(&self, asset_id: &str) -> Option<&[DailyRecord]> {
        self.assets.get(asset_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[DailyRecord])> {
        self.assets.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn group(&self, asset_id: &str) -> Option<&str> {
        self.groups.get(asset_id).map(String::as_str)
    }

    pub fn groups(&self) -> &BTreeMap<String, String> {
        &self.groups
    }

    pub fn scaling_meta(&self, asset_id: &str) -> Option<&ScalingMeta> {
        self.scaling.get(asset_id)
    }

    pub fn scaling(&self) -> &BTreeMap<String, ScalingMeta> {
        &self.scaling
    }

    pub fn with_groups(mut self, groups: BTreeMap<String, String>) -> Self {
        self.groups = groups
            .into_iter()
            .filter(|(id, _)| self.assets.contains_key(id))
            .collect();
        self
    }

    /// Panel restricted to the listed assets (unknown ids are ignored).
    pub fn select_assets<S: AsRef<str>>(&self, ids: &[S]) -> DailyPanel {
        let keep: BTreeSet<&str> = ids.iter().map(AsRef::as_ref).collect();
        self.filter_assets(|id| keep.contains(id))
    }

    pub fn filter_assets(&self, mut keep: impl FnMut(&str) -> bool) -> DailyPanel {
        let assets: BTreeMap<_, _> = self
            .assets
            .iter()
            .filter(|(id, _)| keep(id))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        self.rebuild(assets)
    }

    /// Records dated strictly before `date`.
    pub fn truncate_before(&self, date: NaiveDate) -> DailyPanel {
        self.map_records(|r| r.date < date)
    }

    pub fn restrict_dates(&self, range: DateRange) -> DailyPanel {
        self.map_records(|r| range.contains(r.date))
    }

    fn map_records(&self, keep: impl Fn(&DailyRecord) -> bool) -> DailyPanel {
        let assets = self
            .assets
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().copied().filter(|r| keep(r)).collect()))
            .collect();
        self.rebuild(assets)
    }

    fn rebuild(&self, assets: BTreeMap<String, Vec<DailyRecord>>) -> DailyPanel {
        DailyPanel {
            groups: self
                .groups
                .iter()
                .filter(|(id, _)| assets.contains_key(*id))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            scaling: self
                .scaling
                .iter()
                .filter(|(id, _)| assets.contains_key(*id))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            scaled: self.scaled,
            assets,
        }
    }

    /// Union of two panels over disjoint asset sets. Raw and scaled panels
    /// cannot be merged.
    pub fn merge(&self, other: &DailyPanel) -> Result<DailyPanel> {
        if self.scaled != other.scaled {
            return Err(Error::ScalingMismatch(
                "cannot merge a raw panel with a scaled panel".into(),
            ));
        }
        let mut out = self.clone();
        for (id, records) in &other.assets {
            if out.assets.contains_key(id) {
                return Err(Error::InvalidInput(format!("asset {id} present in both panels")));
            }
            out.assets.insert(id.clone(), records.clone());
            if let Some(g) = other.groups.get(id) {
                out.groups.insert(id.clone(), g.clone());
            }
            if let Some(m) = other.scaling.get(id) {
                out.scaling.insert(id.clone(), *m);
            }
        }
        Ok(out)
    }

    /// Fails unless the panel carries scaled data.
    pub fn require_scaled(&self) -> Result<()> {
        if self.scaled {
            Ok(())
        } else {
            Err(Error::ScalingMismatch("a scaled panel is required".into()))
        }
    }

    /// Inverse of [`scale_panel`]: recovers raw values from the recorded constants.
    pub fn unscaled(&self) -> DailyPanel {
        if !self.scaled {
            return self.clone();
        }
        let assets = self
            .assets
            .iter()
            .map(|(id, recs)| {
                let meta = self.scaling.get(id).copied().unwrap_or(ScalingMeta::IDENTITY);
                (id.clone(), recs.iter().map(|r| meta.invert(r)).collect())
            })
            .collect();
        DailyPanel {
            assets,
            groups: self.groups.clone(),
            scaling: BTreeMap::new(),
            scaled: false,
        }
    }

    /// Earliest and latest dates over all assets.
    pub fn date_span(&self) -> Option<DateRange> {
        let start = self.assets.values().filter_map(|r| r.first()).map(|r| r.date).min()?;
        let end = self.assets.values().filter_map(|r| r.last()).map(|r| r.date).max()?;
        Some(DateRange { start, end })
    }
}

fn validate_records(id: &str, records: &[DailyRecord]) -> Result<()> {
    for w in records.windows(2) {
        if w[1].date <= w[0].date {
            return Err(Error::UnsortedInput(format!(
                "{id}: date {} follows {}",
                w[1].date, w[0].date
            )));
        }
    }
    for r in records {
        if !(r.rv.is_finite() && r.rv >= 0.0) {
            return Err(Error::InvalidInput(format!("{id}: invalid rv {} on {}", r.rv, r.date)));
        }
        if !r.ret.is_finite() {
            return Err(Error::InvalidInput(format!("{id}: invalid return on {}", r.date)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutcome {
    pub panel: DailyPanel,
    /// Assets dropped because their scaling constants are degenerate.
    pub excluded: Vec<(String, String)>,
}

/// Per-asset scaling with constants estimated inside `window` and applied to
/// every record. Moments are population (divide-by-N) moments.
///
/// Scaling an already scaled panel composes the constants, so the recorded
/// metadata always maps back to the original raw values.
pub fn scale_panel(panel: &DailyPanel, window: DateRange) -> Result<ScaleOutcome> {
    let mut assets = BTreeMap::new();
    let mut scaling = BTreeMap::new();
    let mut excluded = Vec::new();
    for (id, records) in &panel.assets {
        let inside: Vec<&DailyRecord> = records.iter().filter(|r| window.contains(r.date)).collect();
        if inside.len() < MIN_SCALING_RECORDS {
            return Err(Error::InsufficientHistory(format!(
                "{id}: {} records inside the scaling window, need {MIN_SCALING_RECORDS}",
                inside.len()
            )));
        }
        let n = inside.len() as f64;
        let mean_sq = inside.iter().map(|r| r.rv * r.rv).sum::<f64>() / n;
        let ret_mean = inside.iter().map(|r| r.ret).sum::<f64>() / n;
        let ret_var = inside.iter().map(|r| (r.ret - ret_mean).powi(2)).sum::<f64>() / n;
        if !(ret_var > 0.0) {
            log::warn!("excluding asset={id} reason=zero_return_variance");
            excluded.push((id.clone(), "zero return variance".to_string()));
            continue;
        }
        if !(mean_sq > 0.0) {
            log::warn!("excluding asset={id} reason=zero_rv");
            excluded.push((id.clone(), "zero realized volatility".to_string()));
            continue;
        }
        let step = ScalingMeta {
            rv_scale: mean_sq.sqrt(),
            ret_mean,
            ret_std: ret_var.sqrt(),
        };
        assets.insert(id.clone(), records.iter().map(|r| step.apply(r)).collect());
        let prior = panel.scaling.get(id).copied().unwrap_or(ScalingMeta::IDENTITY);
        scaling.insert(id.clone(), prior.then(&step));
    }
    let groups = panel
        .groups
        .iter()
        .filter(|(id, _)| assets.contains_key(*id))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(ScaleOutcome {
        panel: DailyPanel {
            assets,
            groups,
            scaling,
            scaled: true,
        },
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignPolicy {
    /// Keep the union date axis and drop assets missing any of its dates.
    DropMissing,
    /// Keep every asset and restrict all of them to the dates they share.
    IntersectDates,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AlignReport {
    pub dropped_assets: Vec<String>,
    pub dropped_dates: BTreeMap<String, Vec<NaiveDate>>,
}

pub fn align_panel(panel: &DailyPanel, policy: AlignPolicy) -> Result<(DailyPanel, AlignReport)> {
    let mut report = AlignReport::default();
    let axis: BTreeSet<NaiveDate> = match policy {
        AlignPolicy::DropMissing => panel
            .assets
            .values()
            .flat_map(|r| r.iter().map(|x| x.date))
            .collect(),
        AlignPolicy::IntersectDates => {
            let mut iter = panel.assets.values();
            let Some(first) = iter.next() else {
                return Err(Error::NoCommonDates);
            };
            let mut common: BTreeSet<NaiveDate> = first.iter().map(|r| r.date).collect();
            for recs in iter {
                let dates: BTreeSet<NaiveDate> = recs.iter().map(|r| r.date).collect();
                common.retain(|d| dates.contains(d));
            }
            common
        }
    };
    if axis.is_empty() {
        return Err(Error::NoCommonDates);
    }
    let mut assets = BTreeMap::new();
    for (id, records) in &panel.assets {
        match policy {
            AlignPolicy::DropMissing => {
                if records.len() == axis.len() {
                    assets.insert(id.clone(), records.clone());
                } else {
                    report.dropped_assets.push(id.clone());
                }
            }
            AlignPolicy::IntersectDates => {
                let (kept, dropped): (Vec<DailyRecord>, Vec<DailyRecord>) =
                    records.iter().partition(|r| axis.contains(&r.date));
                if !dropped.is_empty() {
                    report
                        .dropped_dates
                        .insert(id.clone(), dropped.iter().map(|r| r.date).collect());
                }
                assets.insert(id.clone(), kept);
            }
        }
    }
    if assets.is_empty() {
        return Err(Error::NoCommonDates);
    }
    Ok((panel.rebuild(assets), report))
}

/// Joins daily realized volatilities and returns on their common dates.
pub fn join_daily(rv: &[(NaiveDate, f64)], ret: &[(NaiveDate, f64)]) -> Vec<DailyRecord> {
    let returns: BTreeMap<NaiveDate, f64> = ret.iter().copied().collect();
    rv.iter()
        .filter_map(|&(date, rv)| returns.get(&date).map(|&ret| DailyRecord { date, rv, ret }))
        .collect()
}

// ---------------------------------------------------------------------------
// CSV interfaces
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct IntradayRow {
    asset_id: String,
    timestamp: String,
    price: f64,
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Ok(dt.naive_local());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt);
        }
    }
    Err(Error::InvalidInput(format!("unparseable timestamp {s:?}")))
}

/// Reads `asset_id,timestamp,price` rows into one series per asset.
pub fn read_intraday_csv(path: impl AsRef<Path>) -> Result<Vec<IntradaySeries>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_intraday(file)
}

pub fn read_intraday<R: std::io::Read>(reader: R) -> Result<Vec<IntradaySeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut by_asset: BTreeMap<String, Vec<IntradayBar>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: IntradayRow = row?;
        let timestamp = parse_timestamp(&row.timestamp)?;
        by_asset.entry(row.asset_id).or_default().push(IntradayBar {
            timestamp,
            price: row.price,
        });
    }
    if by_asset.is_empty() {
        return Err(Error::NoData);
    }
    by_asset
        .into_iter()
        .map(|(id, bars)| IntradaySeries::new(id, bars))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelRow {
    asset_id: String,
    date: NaiveDate,
    rv: f64,
    ret: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PanelSidecar {
    scaled: bool,
    scaling: BTreeMap<String, ScalingMeta>,
}

/// Path of the JSON file that carries scaling metadata next to a panel CSV.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

pub fn write_panel<W: std::io::Write>(panel: &DailyPanel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let with_groups = !panel.groups.is_empty();
    if with_groups {
        wtr.write_record(["asset_id", "date", "rv", "ret", "group"])?;
    } else {
        wtr.write_record(["asset_id", "date", "rv", "ret"])?;
    }
    for (id, records) in &panel.assets {
        let group = panel.groups.get(id).map(String::as_str).unwrap_or("");
        for r in records {
            let date = r.date.to_string();
            let rv = r.rv.to_string();
            let ret = r.ret.to_string();
            if with_groups {
                wtr.write_record([id.as_str(), &date, &rv, &ret, group])?;
            } else {
                wtr.write_record([id.as_str(), &date, &rv, &ret])?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<panel writer>", e))?;
    Ok(())
}

/// Writes the daily panel CSV; scaled panels also get a `.meta.json` sidecar.
pub fn write_panel_csv(panel: &DailyPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel(panel, std::io::BufWriter::new(file))?;
    let side = sidecar_path(path);
    if panel.scaled {
        let meta = PanelSidecar {
            scaled: true,
            scaling: panel.scaling.clone(),
        };
        let text = serde_json::to_string_pretty(&meta)?;
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    } else if side.exists() {
        std::fs::remove_file(&side).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}

pub fn read_panel<R: std::io::Read>(reader: R) -> Result<DailyPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut assets: BTreeMap<String, Vec<DailyRecord>> = BTreeMap::new();
    let mut groups = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: PanelRow = row?;
        if let Some(g) = row.group.filter(|g| !g.is_empty()) {
            groups.insert(row.asset_id.clone(), g);
        }
        assets.entry(row.asset_id).or_default().push(DailyRecord {
            date: row.date,
            rv: row.rv,
            ret: row.ret,
        });
    }
    if assets.is_empty() {
        return Err(Error::NoData);
    }
    DailyPanel::new(assets, groups)
}

/// Reads a daily panel CSV, honouring a scaling sidecar when one exists.
pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<DailyPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let panel = read_panel(std::io::BufReader::new(file))?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: PanelSidecar = serde_json::from_str(&text)?;
        if meta.scaled {
            return DailyPanel::from_scaled_parts(panel.assets, panel.groups, meta.scaling);
        }
    }
    Ok(panel)
}
