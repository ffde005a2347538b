use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use volform::eval::AssetIssue;
use volform::panel::{
    align_panel, compute_daily_returns, compute_rv, join_daily, read_intraday_csv, scale_panel, write_panel_csv,
    AlignPolicy, DailyPanel, DateRange, DEFAULT_TRIM_MINUTES,
};
use volform::qrh::{calibrate_qrh, KernelConfig, QrhCalibration, QrhParams, DEFAULT_CALIBRATION_BURN_IN};
use volform::rfsv::{estimate_hurst_with, log_rv, HurstConfig, HurstFit};
use volform::simulate::{default_start_date, simulate_qrh_panel, simulate_rfsv_panel, FbmSpec, QrhSimSpec, RfsvSimSpec};

use super::{ensure_exists, ensure_parent, finish, load_panel, required, with_suffix, write_json, Context};
use crate::config::{usage, write_resolved, Overrides};
use crate::{EstimateArgs, IngestArgs, Outcome, SimulateArgs};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub trim_minutes: u32,
    pub align: AlignPolicy,
    /// Asset id to group label CSV.
    pub groups: Option<PathBuf>,
    pub scale: bool,
    /// Dates whose moments set the scaling constants; the whole sample when
    /// absent.
    pub scaling_window: Option<DateRange>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            trim_minutes: DEFAULT_TRIM_MINUTES,
            align: AlignPolicy::DropMissing,
            groups: None,
            scale: true,
            scaling_window: None,
        }
    }
}

fn read_groups(path: &Path) -> Result<BTreeMap<String, String>> {
    #[derive(Deserialize)]
    struct Row {
        asset_id: String,
        group: String,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading group file {}", path.display()))?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: Row = row.with_context(|| format!("parsing group file {}", path.display()))?;
        out.insert(row.asset_id, row.group);
    }
    Ok(out)
}

pub fn ingest(ctx: &Context, args: &IngestArgs) -> Result<Outcome> {
    let mut o = Overrides::default();
    o.set("input", args.input.as_ref())
        .set("output", args.output.as_ref())
        .set("trim_minutes", args.trim_minutes)
        .set("align", args.align.as_ref())
        .set("groups", args.groups.as_ref())
        .set("scale", args.no_scale.then_some(false));
    let cfg: IngestConfig = ctx.resolve("ingest", &o)?;
    let input = required(&cfg.input, "input")?;
    let output = required(&cfg.output, "output")?;
    ensure_exists(input, "input")?;
    if let Some(g) = &cfg.groups {
        ensure_exists(g, "groups")?;
    }
    if ctx.dry_run {
        return Ok(Outcome::default());
    }

    let series = read_intraday_csv(input).with_context(|| format!("reading intraday prices {}", input.display()))?;
    let mut issues = Vec::new();
    let mut assets = BTreeMap::new();
    for s in &series {
        let daily = compute_rv(s, cfg.trim_minutes).and_then(|rv| {
            let ret = compute_daily_returns(s)?;
            Ok((rv, ret))
        });
        match daily {
            Ok((rv, ret)) => {
                if !rv.omitted.is_empty() {
                    log::warn!("asset={} omitted_days={} reason=too_few_bars", s.asset_id, rv.omitted.len());
                }
                let records = join_daily(&rv.values, &ret);
                if records.is_empty() {
                    issues.push(issue(&s.asset_id, "ingest", "no day with both rv and return"));
                } else {
                    assets.insert(s.asset_id.clone(), records);
                }
            }
            Err(e) => issues.push(issue(&s.asset_id, "ingest", &e.to_string())),
        }
    }
    let groups = cfg.groups.as_deref().map(read_groups).transpose()?.unwrap_or_default();
    let panel = DailyPanel::new(assets, groups)?;
    let (mut panel, report) = align_panel(&panel, cfg.align)?;
    for id in &report.dropped_assets {
        issues.push(issue(id, "ingest", "dropped by date alignment"));
    }
    if cfg.scale {
        let window = match cfg.scaling_window {
            Some(w) => w,
            None => {
                let span = panel.date_span().ok_or_else(|| anyhow::anyhow!("no data left after alignment"))?;
                log::warn!(
                    "scaling_window unset; scaling on the full sample {}..{} leaks future moments into any later test period",
                    span.start,
                    span.end
                );
                span
            }
        };
        let out = scale_panel(&panel, window)?;
        for (id, reason) in &out.excluded {
            issues.push(issue(id, "ingest", reason));
        }
        panel = out.panel;
    }
    ensure_parent(output)?;
    write_panel_csv(&panel, output)?;
    write_resolved(&cfg, &with_suffix(output, ".config.json"))?;
    log::info!("wrote panel path={} assets={}", output.display(), panel.n_assets());
    Ok(finish(issues))
}

fn issue(asset: &str, stage: &str, reason: &str) -> AssetIssue {
    AssetIssue {
        asset_id: asset.to_string(),
        model_id: stage.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Rfsv,
    Qrh,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfsvSimOptions {
    pub hurst: f64,
    pub nu: f64,
    pub log_vol_mean: f64,
}

impl Default for RfsvSimOptions {
    fn default() -> Self {
        Self {
            hurst: 0.1,
            nu: 0.3,
            log_vol_mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QrhSimOptions {
    pub kernel: KernelConfig,
    pub params: QrhParams,
    pub burn_in: usize,
}

impl Default for QrhSimOptions {
    fn default() -> Self {
        Self {
            kernel: KernelConfig::default(),
            params: QrhParams::UNIVERSAL,
            burn_in: volform::simulate::DEFAULT_QRH_BURN_IN,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub output: Option<PathBuf>,
    pub generator: Generator,
    pub n_assets: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Assign asset `i` to group `G{i mod n_groups}`.
    pub n_groups: Option<usize>,
    pub rfsv: RfsvSimOptions,
    pub qrh: QrhSimOptions,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            output: None,
            generator: Generator::Rfsv,
            n_assets: 10,
            n_steps: 3000,
            seed: 42,
            start_date: default_start_date(),
            n_groups: None,
            rfsv: RfsvSimOptions::default(),
            qrh: QrhSimOptions::default(),
        }
    }
}

pub fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<Outcome> {
    let mut o = Overrides::default();
    o.set("output", args.output.as_ref())
        .set("generator", args.generator.as_ref())
        .set("n_assets", args.n_assets)
        .set("n_steps", args.n_steps)
        .set("seed", args.seed)
        .set("rfsv.hurst", args.hurst)
        .set("rfsv.nu", args.nu);
    let cfg: SimulateConfig = ctx.resolve("simulate", &o)?;
    let output = required(&cfg.output, "output")?;
    if cfg.n_groups == Some(0) {
        return Err(usage("n_groups must be positive"));
    }
    let build = || -> volform::Result<DailyPanel> {
        match cfg.generator {
            Generator::Rfsv => {
                let spec = RfsvSimSpec {
                    fbm: FbmSpec {
                        hurst: cfg.rfsv.hurst,
                        n_steps: cfg.n_steps,
                        dt: 1.0,
                        seed: cfg.seed,
                    },
                    nu: cfg.rfsv.nu,
                    log_vol_mean: cfg.rfsv.log_vol_mean,
                };
                if ctx.dry_run {
                    spec.fbm.validate()?;
                    return Ok(DailyPanel::new(BTreeMap::new(), BTreeMap::new())?);
                }
                simulate_rfsv_panel(&spec, cfg.n_assets, cfg.start_date)
            }
            Generator::Qrh => {
                let spec = QrhSimSpec {
                    kernel: cfg.qrh.kernel.build()?,
                    a: cfg.qrh.params.a,
                    b: cfg.qrh.params.b,
                    c_qrh: cfg.qrh.params.c_qrh,
                    n_steps: cfg.n_steps,
                    seed: cfg.seed,
                    burn_in: cfg.qrh.burn_in,
                };
                spec.validate()?;
                if ctx.dry_run {
                    return Ok(DailyPanel::new(BTreeMap::new(), BTreeMap::new())?);
                }
                simulate_qrh_panel(&spec, cfg.n_assets, cfg.start_date)
            }
        }
    };
    let panel = build().map_err(|e| match e {
        volform::Error::InvalidParameter(m) => usage(m),
        e => e.into(),
    })?;
    if ctx.dry_run {
        return Ok(Outcome::default());
    }
    let panel = match cfg.n_groups {
        Some(n) => {
            let groups = panel
                .asset_ids()
                .enumerate()
                .map(|(i, id)| (id.to_string(), format!("G{}", i % n)))
                .collect();
            panel.with_groups(groups)
        }
        None => panel,
    };
    ensure_parent(output)?;
    write_panel_csv(&panel, output)?;
    write_resolved(&cfg, &with_suffix(output, ".config.json"))?;
    log::info!(
        "wrote panel path={} assets={} steps={}",
        output.display(),
        panel.n_assets(),
        cfg.n_steps
    );
    Ok(Outcome::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Hurst,
    Qrh,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub estimator: Estimator,
    /// Restrict estimation to these dates.
    pub range: Option<DateRange>,
    pub scaling_window: Option<DateRange>,
    pub hurst: HurstConfig,
    pub kernel: KernelConfig,
    pub burn_in: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            estimator: Estimator::Hurst,
            range: None,
            scaling_window: None,
            hurst: HurstConfig::default(),
            kernel: KernelConfig::default(),
            burn_in: DEFAULT_CALIBRATION_BURN_IN,
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum Fit {
    Hurst(HurstFit),
    Qrh(QrhCalibration),
}

pub fn estimate(ctx: &Context, args: &EstimateArgs) -> Result<Outcome> {
    let mut o = Overrides::default();
    o.set("input", args.input.as_ref())
        .set("output", args.output.as_ref())
        .set("estimator", args.estimator.as_ref());
    let cfg: EstimateConfig = ctx.resolve("estimate", &o)?;
    let input = required(&cfg.input, "input")?;
    let output = required(&cfg.output, "output")?;
    ensure_exists(input, "input")?;
    let kernel = cfg.kernel.build().map_err(|e| usage(e.to_string()))?;
    if ctx.dry_run {
        return Ok(Outcome::default());
    }
    let stage = match cfg.estimator {
        Estimator::Hurst => "estimate_hurst",
        Estimator::Qrh => "estimate_qrh",
    };
    let mut issues = Vec::new();
    let mut panel = load_panel(input, cfg.scaling_window, stage, &mut issues)?;
    if let Some(r) = cfg.range {
        panel = panel.restrict_dates(r);
    }
    let ids: Vec<&str> = panel.asset_ids().collect();
    let results: Vec<(String, volform::Result<Fit>)> = ids
        .par_iter()
        .map(|&id| {
            let records = panel.records(id).expect("listed asset");
            let rv: Vec<f64> = records.iter().map(|r| r.rv).collect();
            let fit = match cfg.estimator {
                Estimator::Hurst => log_rv(&rv).and_then(|lv| estimate_hurst_with(&lv, &cfg.hurst)).map(Fit::Hurst),
                Estimator::Qrh => {
                    let ret: Vec<f64> = records.iter().map(|r| r.ret).collect();
                    calibrate_qrh(&rv, &ret, &kernel, cfg.burn_in).map(Fit::Qrh)
                }
            };
            (id.to_string(), fit)
        })
        .collect();
    let mut fits = BTreeMap::new();
    for (id, fit) in results {
        match fit {
            Ok(f) => {
                fits.insert(id, f);
            }
            Err(e) => issues.push(issue(&id, stage, &e.to_string())),
        }
    }
    log_estimate_summary(&fits);

    ensure_parent(output)?;
    if output.extension().is_some_and(|e| e == "json") {
        write_json(&fits, output)?;
    } else {
        write_fit_csv(&fits, &panel, output)?;
    }
    write_resolved(&cfg, &with_suffix(output, ".config.json"))?;
    log::info!("wrote estimates path={} assets={}", output.display(), fits.len());
    Ok(finish(issues))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    v.sort_by(f64::total_cmp);
    (!v.is_empty()).then(|| volform::eval::quantile_sorted(&v, 0.5))
}

fn log_estimate_summary(fits: &BTreeMap<String, Fit>) {
    let pick = |f: &dyn Fn(&Fit) -> Option<f64>| median(fits.values().filter_map(f).collect());
    if let Some(h) = pick(&|f| if let Fit::Hurst(x) = f { Some(x.hurst) } else { None }) {
        log::info!("estimate median_hurst={h}");
    }
    if let Some(a) = pick(&|f| if let Fit::Qrh(x) = f { Some(x.params.a) } else { None }) {
        let b = pick(&|f| if let Fit::Qrh(x) = f { Some(x.params.b) } else { None }).unwrap_or(f64::NAN);
        let c = pick(&|f| if let Fit::Qrh(x) = f { Some(x.params.c_qrh) } else { None }).unwrap_or(f64::NAN);
        log::info!("estimate median_a={a} median_b={b} median_c={c}");
    }
}

fn write_fit_csv(fits: &BTreeMap<String, Fit>, panel: &DailyPanel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let hurst = fits.values().next().map_or(true, |f| matches!(f, Fit::Hurst(_)));
    if hurst {
        w.write_record(["asset_id", "group", "hurst", "nu", "c_rfsv", "r2"])?;
    } else {
        w.write_record(["asset_id", "group", "a", "b", "c_qrh", "objective", "samples", "converged"])?;
    }
    for (id, fit) in fits {
        let group = panel.group(id).unwrap_or("").to_string();
        let row = match fit {
            Fit::Hurst(f) => vec![
                id.clone(),
                group,
                f.hurst.to_string(),
                f.nu.to_string(),
                f.c_rfsv.to_string(),
                f.r2.to_string(),
            ],
            Fit::Qrh(f) => vec![
                id.clone(),
                group,
                f.params.a.to_string(),
                f.params.b.to_string(),
                f.params.c_qrh.to_string(),
                f.objective.to_string(),
                f.samples.to_string(),
                f.converged.to_string(),
            ],
        };
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
