use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};
use volform::eval::{
    audit_lookahead, backtest as run_backtest, dynamic_eval, group_comparison, lambda_sweep, report_from_outputs,
    seq_len_study, AssetIssue, AuditReport, BacktestOutput, Forecaster, Model, ModelSpec, RetrainSchedule,
};
use volform::linear::WindowConfig;
use volform::lstm::{load_checkpoint, LstmConfig, LstmEnsemble};
use volform::panel::DateRange;
use volform::qrh::{KernelConfig, QrhParams};
use volform::rfsv::{RfsvForecastConfig, RfsvParams};

use super::{ensure_exists, ensure_parent, finish, load_panel, required, with_suffix, write_json, Context};
use crate::config::{usage, write_resolved, Overrides};
use crate::{BacktestArgs, Outcome, SweepArgs};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupComparisonConfig {
    /// Model trained on every group.
    pub universal: ModelSpec,
    /// One model per group label.
    pub group_models: BTreeMap<String, ModelSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicConfig {
    /// Ensemble the retrained models are compared against.
    pub static_checkpoint: PathBuf,
    #[serde(default)]
    pub lstm: LstmConfig,
    /// Defaults to January 1st of every year in the period.
    #[serde(default)]
    pub schedule: Option<RetrainSchedule>,
    #[serde(default = "six")]
    pub lookback_years: u32,
}

fn six() -> u32 {
    6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub input: Option<PathBuf>,
    /// Output directory.
    pub output: Option<PathBuf>,
    pub models: Vec<ModelSpec>,
    pub baseline: ModelSpec,
    pub window: WindowConfig,
    /// Forecast target dates; all dates with a full window when absent.
    pub period: Option<DateRange>,
    /// Dates left out of every MSE.
    pub exclusions: Vec<DateRange>,
    pub scaling_window: Option<DateRange>,
    /// Random (asset, date) forecasts re-derived from truncated data, per model.
    pub audit_probes: usize,
    pub audit_seed: u64,
    pub write_forecasts: bool,
    pub group_comparison: Option<GroupComparisonConfig>,
    pub dynamic: Option<DynamicConfig>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            models: Vec::new(),
            baseline: ModelSpec::Har {},
            window: WindowConfig::default(),
            period: None,
            exclusions: Vec::new(),
            scaling_window: None,
            audit_probes: 0,
            audit_seed: 0,
            write_forecasts: true,
            group_comparison: None,
            dynamic: None,
        }
    }
}

fn parse_fixed_qrh(s: &str) -> Result<QrhParams> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums = parts
        .iter()
        .map(|p| p.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("--fixed-qrh expects three numbers a,b,c, got `{s}`")))?;
    match nums[..] {
        [a, b, c] => QrhParams::new(a, b, c).map_err(|e| usage(format!("--fixed-qrh: {e}"))),
        _ => Err(usage(format!("--fixed-qrh expects three numbers a,b,c, got `{s}`"))),
    }
}

/// Replaces the parameters of every fixed QRH model, including those inside
/// blends. Returns how many were replaced.
fn apply_fixed_qrh(spec: &mut ModelSpec, fixed: QrhParams) -> usize {
    match spec {
        ModelSpec::QrhFixed { params, .. } => {
            *params = fixed;
            1
        }
        ModelSpec::Blend { rfsv, qrh, .. } => apply_fixed_qrh(rfsv, fixed) + apply_fixed_qrh(qrh, fixed),
        _ => 0,
    }
}

fn build_models(specs: &[ModelSpec]) -> Result<Vec<Model>> {
    let mut cache: BTreeMap<PathBuf, LstmEnsemble> = BTreeMap::new();
    let mut load = |p: &Path| -> volform::Result<LstmEnsemble> {
        if let Some(e) = cache.get(p) {
            return Ok(e.clone());
        }
        let e = load_checkpoint(p)?;
        cache.insert(p.to_path_buf(), e.clone());
        Ok(e)
    };
    specs
        .iter()
        .map(|s| {
            let m = s.build(&mut load)?;
            m.validate()?;
            Ok(m)
        })
        .collect::<volform::Result<Vec<_>>>()
        .map_err(|e| match e {
            volform::Error::InvalidParameter(m) => usage(m),
            e => anyhow::Error::from(e).context("building models"),
        })
}

fn write_forecasts(outputs: &[&BacktestOutput], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["model", "asset_id", "date", "predicted", "realized"])?;
    for o in outputs {
        for (id, s) in &o.series {
            for e in &s.entries {
                w.write_record([
                    o.model_id.as_str(),
                    id.as_str(),
                    &e.date.to_string(),
                    &e.predicted.to_string(),
                    &e.realized.to_string(),
                ])?;
            }
        }
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ModelAudit {
    model_id: String,
    passed: bool,
    #[serde(flatten)]
    report: AuditReport,
}

pub fn backtest(ctx: &Context, args: &BacktestArgs) -> Result<Outcome> {
    let mut o = Overrides::default();
    o.set("input", args.input.as_ref())
        .set("output", args.output.as_ref())
        .set("window.window_len", args.window_len)
        .set("window.refit_every", args.refit_every)
        .set("audit_probes", args.audit_probes);
    let mut cfg: BacktestConfig = ctx.resolve("backtest", &o)?;
    if let Some(s) = &args.fixed_qrh {
        let fixed = parse_fixed_qrh(s)?;
        let replaced: usize = cfg.models.iter_mut().map(|m| apply_fixed_qrh(m, fixed)).sum();
        if replaced == 0 {
            cfg.models.push(ModelSpec::QrhFixed {
                kernel: KernelConfig::default(),
                params: fixed,
            });
        }
        log::info!("config key=fixed_qrh source=flag value=\"{s}\" replaced={replaced}");
    }
    if cfg.models.is_empty() {
        return Err(usage("backtest needs at least one entry in `models`"));
    }
    let input = required(&cfg.input, "input")?;
    let out_dir = required(&cfg.output, "output")?;
    ensure_exists(input, "input")?;
    let models = build_models(&cfg.models)?;
    let baseline = build_models(std::slice::from_ref(&cfg.baseline))?.remove(0);
    let max_context = models.iter().chain([&baseline]).map(|m| m.context_len()).max().unwrap_or(0);
    cfg.window
        .validate(max_context)
        .map_err(|e| usage(format!("window: {e}")))?;
    if let Some(d) = &cfg.dynamic {
        if cfg.period.is_none() {
            return Err(usage("`dynamic` needs `period`"));
        }
        ensure_exists(&d.static_checkpoint, "dynamic.static_checkpoint")?;
        d.lstm.validate().map_err(|e| usage(format!("dynamic.lstm: {e}")))?;
    }
    let group_models = match &cfg.group_comparison {
        Some(g) => {
            if g.group_models.is_empty() {
                return Err(usage("group_comparison.group_models is empty"));
            }
            let universal = build_models(std::slice::from_ref(&g.universal))?.remove(0);
            let specs: Vec<ModelSpec> = g.group_models.values().cloned().collect();
            let built = build_models(&specs)?;
            Some((universal, g.group_models.keys().cloned().zip(built).collect::<Vec<_>>()))
        }
        None => None,
    };
    if ctx.dry_run {
        return Ok(Outcome::default());
    }

    let mut issues = Vec::new();
    let panel = load_panel(input, cfg.scaling_window, "backtest", &mut issues)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating directory {}", out_dir.display()))?;

    let base = run_backtest(&baseline, &panel, &cfg.window, cfg.period)?;
    let mut outputs = Vec::with_capacity(models.len());
    for m in &models {
        let out = run_backtest(m, &panel, &cfg.window, cfg.period)?;
        log::info!(
            "backtest model={} assets={} skipped={}",
            out.model_id,
            out.series.len(),
            out.skipped.len()
        );
        outputs.push(out);
    }
    // Ratios need the same assets on both sides.
    let common = common_assets(std::iter::once(&base).chain(&outputs));
    let trimmed: Vec<BacktestOutput> = outputs.iter().map(|o| keep_assets(o, &common)).collect();
    let report = report_from_outputs(&trimmed, &keep_assets(&base, &common), &panel, &cfg.window, cfg.period, &cfg.exclusions)?;
    issues.extend(report.skipped.iter().cloned());
    report.save(out_dir, "report")?;
    for m in &report.models {
        if let Some(s) = &m.summary {
            log::info!(
                "report model={} median_ratio={} aggregate_ratio={}",
                m.model_id,
                s.median,
                m.aggregate_ratio.unwrap_or(f64::NAN)
            );
        }
    }
    if cfg.write_forecasts {
        let all: Vec<&BacktestOutput> = std::iter::once(&base).chain(&outputs).collect();
        write_forecasts(&all, &out_dir.join("forecasts.csv"))?;
    }

    let mut audit_failed = Vec::new();
    if cfg.audit_probes > 0 {
        let mut audits = Vec::new();
        let forecasters: Vec<&Model> = std::iter::once(&baseline).chain(&models).collect();
        let outs: Vec<&BacktestOutput> = std::iter::once(&base).chain(&outputs).collect();
        for (m, out) in forecasters.into_iter().zip(outs) {
            if out.series.values().all(|s| s.is_empty()) {
                continue;
            }
            let a = audit_lookahead(m, &panel, &cfg.window, cfg.period, out, cfg.audit_probes, cfg.audit_seed)?;
            log::info!(
                "audit model={} probes={} mismatches={}",
                out.model_id,
                a.probes,
                a.mismatches.len()
            );
            if !a.passed() {
                audit_failed.push(out.model_id.clone());
            }
            audits.push(ModelAudit {
                model_id: out.model_id.clone(),
                passed: a.passed(),
                report: a,
            });
        }
        write_json(&audits, &out_dir.join("audit.json"))?;
    }

    if let Some((universal, group_models)) = &group_models {
        let refs: Vec<(String, &dyn Forecaster)> =
            group_models.iter().map(|(g, m)| (g.clone(), m as &dyn Forecaster)).collect();
        let cmp = group_comparison(universal, &refs, &panel, &cfg.window, cfg.period, &cfg.exclusions)?;
        write_json(&cmp, &out_dir.join("group_comparison.json"))?;
    }
    if let Some(d) = &cfg.dynamic {
        let period = cfg.period.expect("checked above");
        let schedule = d
            .schedule
            .clone()
            .unwrap_or_else(|| RetrainSchedule::yearly(period, d.lookback_years));
        let static_model = Arc::new(load_checkpoint(&d.static_checkpoint)?);
        let dynamic = dynamic_eval(&schedule, &panel, &d.lstm, static_model, period, &cfg.exclusions)?;
        write_json(&dynamic, &out_dir.join("dynamic.json"))?;
    }
    write_resolved(&cfg, &out_dir.join("config.json"))?;
    if !audit_failed.is_empty() {
        anyhow::bail!("look-ahead audit failed for {}", audit_failed.join(", "));
    }
    Ok(finish(issues))
}

fn common_assets<'a>(outs: impl Iterator<Item = &'a BacktestOutput>) -> Vec<String> {
    let mut common: Option<Vec<String>> = None;
    for o in outs {
        let ids: Vec<String> = o.series.keys().cloned().collect();
        common = Some(match common {
            None => ids,
            Some(c) => c.into_iter().filter(|id| o.series.contains_key(id)).collect(),
        });
    }
    common.unwrap_or_default()
}

fn keep_assets(o: &BacktestOutput, ids: &[String]) -> BacktestOutput {
    let mut skipped = o.skipped.clone();
    for id in o.series.keys().filter(|id| !ids.contains(id)) {
        skipped.push(AssetIssue {
            asset_id: id.clone(),
            model_id: o.model_id.clone(),
            reason: "another model produced no forecasts for this asset".into(),
        });
    }
    BacktestOutput {
        model_id: o.model_id.clone(),
        series: o.series.iter().filter(|(id, _)| ids.contains(id)).map(|(k, v)| (k.clone(), v.clone())).collect(),
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Lambda,
    SeqLen,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub kind: SweepKind,
    pub scaling_window: Option<DateRange>,
    pub lambdas: Vec<f64>,
    pub rfsv: ModelSpec,
    pub qrh: ModelSpec,
    pub reference: ModelSpec,
    pub window: WindowConfig,
    pub period: Option<DateRange>,
    pub exclusions: Vec<DateRange>,
    pub seq_lens: Vec<usize>,
    pub lstm: LstmConfig,
    pub train_range: Option<DateRange>,
    pub test_range: Option<DateRange>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            kind: SweepKind::Lambda,
            scaling_window: None,
            lambdas: (0..=10).map(|k| f64::from(k) / 10.0).collect(),
            rfsv: ModelSpec::RfsvFixed {
                params: RfsvParams::UNIVERSAL,
                forecast: RfsvForecastConfig::default(),
            },
            qrh: ModelSpec::QrhFixed {
                kernel: KernelConfig::default(),
                params: QrhParams::UNIVERSAL,
            },
            reference: ModelSpec::Har {},
            window: WindowConfig::default(),
            period: None,
            exclusions: Vec::new(),
            seq_lens: vec![1, 5, 10, 22, 44],
            lstm: LstmConfig::default(),
            train_range: None,
            test_range: None,
        }
    }
}

pub fn sweep(ctx: &Context, args: &SweepArgs) -> Result<Outcome> {
    let mut o = Overrides::default();
    o.set("input", args.input.as_ref())
        .set("output", args.output.as_ref())
        .set("kind", args.kind.as_ref())
        .set("lambdas", args.lambdas.as_ref())
        .set("seq_lens", args.seq_lens.as_ref());
    let cfg: SweepConfig = ctx.resolve("sweep", &o)?;
    let input = required(&cfg.input, "input")?;
    let output = required(&cfg.output, "output")?;
    ensure_exists(input, "input")?;
    match cfg.kind {
        SweepKind::Lambda => {
            if cfg.lambdas.is_empty() || cfg.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return Err(usage("lambdas must be a non-empty list of values in [0, 1]"));
            }
        }
        SweepKind::SeqLen => {
            if cfg.seq_lens.is_empty() || cfg.seq_lens.contains(&0) {
                return Err(usage("seq_lens must be a non-empty list of positive lengths"));
            }
            required(&cfg.train_range, "train_range")?;
            required(&cfg.test_range, "test_range")?;
            cfg.lstm.validate().map_err(|e| usage(format!("lstm: {e}")))?;
        }
    }
    let models = match cfg.kind {
        SweepKind::Lambda => {
            let m = build_models(&[cfg.rfsv.clone(), cfg.qrh.clone(), cfg.reference.clone()])?;
            let max_context = m.iter().map(|m| m.context_len()).max().unwrap_or(0);
            cfg.window
                .validate(max_context)
                .map_err(|e| usage(format!("window: {e}")))?;
            m
        }
        SweepKind::SeqLen => Vec::new(),
    };
    if ctx.dry_run {
        return Ok(Outcome::default());
    }

    let mut issues = Vec::new();
    let panel = load_panel(input, cfg.scaling_window, "sweep", &mut issues)?;
    ensure_parent(output)?;
    match cfg.kind {
        SweepKind::Lambda => {
            let outs = models
                .iter()
                .map(|m| run_backtest(m, &panel, &cfg.window, cfg.period))
                .collect::<volform::Result<Vec<_>>>()?;
            let common = common_assets(outs.iter());
            if common.iter().all(|id| outs[0].series[id].is_empty()) {
                anyhow::bail!("no forecasts produced; histories may be shorter than window_len {}", cfg.window.window_len);
            }
            let outs: Vec<BacktestOutput> = outs.iter().map(|o| keep_assets(o, &common)).collect();
            for o in &outs {
                issues.extend(o.skipped.iter().cloned());
            }
            let sweep = lambda_sweep(&outs[0].series, &outs[1].series, &cfg.lambdas, &outs[2].series, &cfg.exclusions)?;
            log::info!("sweep kind=lambda best_lambda={}", sweep.best_lambda);
            write_json(&sweep, &output.with_extension("json"))?;
            let mut w = csv::Writer::from_path(output).with_context(|| format!("writing {}", output.display()))?;
            w.write_record(["lambda", "n", "min", "q25", "median", "q75", "max", "mean", "aggregate_ratio"])?;
            for p in &sweep.points {
                let s = &p.summary;
                w.write_record([
                    p.lambda.to_string(),
                    s.n.to_string(),
                    s.min.to_string(),
                    s.q25.to_string(),
                    s.median.to_string(),
                    s.q75.to_string(),
                    s.max.to_string(),
                    s.mean.to_string(),
                    p.aggregate_ratio.to_string(),
                ])?;
            }
            w.flush().with_context(|| format!("writing {}", output.display()))?;
        }
        SweepKind::SeqLen => {
            panel.require_scaled()?;
            let train = cfg.train_range.expect("checked above");
            let test = cfg.test_range.expect("checked above");
            let points = seq_len_study(&panel, &cfg.lstm, &cfg.seq_lens, train, test)?;
            write_json(&points, &output.with_extension("json"))?;
            let mut w = csv::Writer::from_path(output).with_context(|| format!("writing {}", output.display()))?;
            w.write_record(["seq_len", "train_mse", "test_mse", "n_train", "n_test"])?;
            for p in &points {
                w.write_record([
                    p.seq_len.to_string(),
                    p.train_mse.to_string(),
                    p.test_mse.to_string(),
                    p.n_train.to_string(),
                    p.n_test.to_string(),
                ])?;
            }
            w.flush().with_context(|| format!("writing {}", output.display()))?;
        }
    }
    write_resolved(&cfg, &with_suffix(output, ".config.json"))?;
    log::info!("wrote sweep path={}", output.display());
    Ok(finish(issues))
}
