use std::path::PathBuf;

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};
use volform::lstm::{self, load_checkpoint, save_checkpoint, FineTuneConfig, LstmConfig, SampleSet};
use volform::panel::DateRange;

use super::{ensure_exists, ensure_parent, finish, load_panel, required, with_suffix, write_json, Context};
use crate::config::{usage, write_resolved, Overrides};
use crate::{FineTuneArgs, Outcome, SensitivitiesArgs, TrainArgs};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub input: Option<PathBuf>,
    /// Checkpoint path; the training report goes to `<output>.report.json`.
    pub output: Option<PathBuf>,
    pub lstm: LstmConfig,
    /// Target dates used for training; all dates when absent.
    pub train_range: Option<DateRange>,
    /// Train on these assets only.
    pub assets: Option<Vec<String>>,
    /// Rescale the panel on this window before training.
    pub scaling_window: Option<DateRange>,
}

pub fn train(ctx: &Context, args: &TrainArgs) -> Result<Outcome> {
    let mut o = Overrides::default();
    o.set("input", args.input.as_ref())
        .set("output", args.output.as_ref())
        .set("lstm.epochs", args.epochs)
        .set("lstm.batch_size", args.batch_size)
        .set("lstm.learning_rate", args.learning_rate)
        .set("lstm.input_dim", args.input_dim)
        .set("lstm.seq_len", args.seq_len)
        .set("lstm.seeds", args.seeds.as_ref());
    let cfg: TrainConfig = ctx.resolve("train", &o)?;
    let input = required(&cfg.input, "input")?;
    let output = required(&cfg.output, "output")?;
    ensure_exists(input, "input")?;
    cfg.lstm.validate().map_err(|e| usage(format!("lstm: {e}")))?;
    if ctx.dry_run {
        return Ok(Outcome::default());
    }
    let mut issues = Vec::new();
    let panel = load_panel(input, cfg.scaling_window, "train", &mut issues)?;
    let (ensemble, report) = lstm::train(&panel, &cfg.lstm, cfg.train_range, cfg.assets.as_deref())?;
    ensure_parent(output)?;
    save_checkpoint(&ensemble, output)?;
    write_json(&report, &with_suffix(output, ".report.json"))?;
    write_resolved(&cfg, &with_suffix(output, ".config.json"))?;
    log::info!(
        "wrote checkpoint path={} members={} samples={}",
        output.display(),
        ensemble.members.len(),
        report.n_samples
    );
    Ok(finish(issues))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneCommandConfig {
    pub input: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub tune: FineTuneConfig,
    pub range: Option<DateRange>,
    pub assets: Option<Vec<String>>,
    pub scaling_window: Option<DateRange>,
}

pub fn fine_tune(ctx: &Context, args: &FineTuneArgs) -> Result<Outcome> {
    let mut o = Overrides::default();
    o.set("input", args.input.as_ref())
        .set("checkpoint", args.checkpoint.as_ref())
        .set("output", args.output.as_ref())
        .set("tune.mode", args.mode.as_ref())
        .set("tune.epochs", args.epochs)
        .set("tune.learning_rate", args.learning_rate)
        .set("assets", args.assets.as_ref());
    let cfg: FineTuneCommandConfig = ctx.resolve("fine-tune", &o)?;
    let input = required(&cfg.input, "input")?;
    let checkpoint = required(&cfg.checkpoint, "checkpoint")?;
    let output = required(&cfg.output, "output")?;
    ensure_exists(input, "input")?;
    ensure_exists(checkpoint, "checkpoint")?;
    let base = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    if ctx.dry_run {
        return Ok(Outcome::default());
    }
    let mut issues = Vec::new();
    let mut panel = load_panel(input, cfg.scaling_window, "fine-tune", &mut issues)?;
    panel.require_scaled()?;
    if let Some(ids) = &cfg.assets {
        panel = panel.select_assets(ids);
    }
    let samples = SampleSet::from_panel(&panel, &base.config, cfg.range)?;
    log::info!("fine_tune samples={} mode={:?}", samples.len(), cfg.tune.mode);
    let (tuned, report) = lstm::fine_tune(&base, &samples, &cfg.tune)?;
    ensure_parent(output)?;
    save_checkpoint(&tuned, output)?;
    write_json(&report, &with_suffix(output, ".report.json"))?;
    write_resolved(&cfg, &with_suffix(output, ".config.json"))?;
    log::info!("wrote checkpoint path={}", output.display());
    Ok(finish(issues))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitiesConfig {
    pub input: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub range: Option<DateRange>,
    pub assets: Option<Vec<String>>,
    pub scaling_window: Option<DateRange>,
}

pub fn sensitivities(ctx: &Context, args: &SensitivitiesArgs) -> Result<Outcome> {
    let mut o = Overrides::default();
    o.set("input", args.input.as_ref())
        .set("checkpoint", args.checkpoint.as_ref())
        .set("output", args.output.as_ref());
    let cfg: SensitivitiesConfig = ctx.resolve("sensitivities", &o)?;
    let input = required(&cfg.input, "input")?;
    let checkpoint = required(&cfg.checkpoint, "checkpoint")?;
    let output = required(&cfg.output, "output")?;
    ensure_exists(input, "input")?;
    ensure_exists(checkpoint, "checkpoint")?;
    let ensemble = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    if ctx.dry_run {
        return Ok(Outcome::default());
    }
    let mut issues = Vec::new();
    let panel = load_panel(input, cfg.scaling_window, "sensitivities", &mut issues)?;
    panel.require_scaled()?;
    let report = lstm::sensitivities(&ensemble, &panel, cfg.assets.as_deref(), cfg.range)?;
    ensure_parent(output)?;
    write_json(&report, output)?;

    let csv_path = output.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    w.write_record(["tau", "alpha_mean", "alpha_std", "beta_mean", "beta_std"])?;
    for (i, (am, asd)) in report.mean.alpha.iter().zip(&report.std.alpha).enumerate() {
        let beta = |p: &lstm::SensitivityProfile| p.beta.as_ref().map_or(String::new(), |b| b[i].to_string());
        w.write_record([
            (i + 1).to_string(),
            am.to_string(),
            asd.to_string(),
            beta(&report.mean),
            beta(&report.std),
        ])?;
    }
    w.flush().with_context(|| format!("writing {}", csv_path.display()))?;
    write_resolved(&cfg, &with_suffix(output, ".config.json"))?;
    log::info!("wrote sensitivities path={} assets={}", output.display(), report.per_asset.len());
    Ok(finish(issues))
}
