mod data;
mod evaluate;
mod network;

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use volform::eval::AssetIssue;
use volform::panel::{read_panel_csv, scale_panel, DailyPanel, DateRange};

pub use data::{estimate, ingest, simulate, EstimateConfig, Estimator, Generator, IngestConfig, SimulateConfig};
pub use evaluate::{backtest, sweep, BacktestConfig, SweepConfig, SweepKind};
pub use network::{fine_tune, sensitivities, train, FineTuneCommandConfig, SensitivitiesConfig, TrainConfig};

use crate::config::{self, usage, Overrides};

pub struct Context<'a> {
    pub file: Option<&'a Map<String, Value>>,
    pub dry_run: bool,
}

impl Context<'_> {
    fn resolve<T: DeserializeOwned + Serialize>(&self, command: &str, overrides: &Overrides) -> Result<T> {
        log::info!("command={command} dry_run={}", self.dry_run);
        config::resolve(self.file, overrides)
    }
}

fn required<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| usage(format!("missing required config key `{key}`")))
}

fn ensure_exists(path: &Path, key: &str) -> Result<()> {
    if !path.exists() {
        anyhow::bail!("{key}: file {} does not exist", path.display());
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
    }
    Ok(())
}

/// `<path>.<suffix>`, e.g. `model.json` -> `model.json.config.json`.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Reads a panel and optionally rescales it on `scaling_window`. Assets
/// with degenerate scaling constants are dropped and reported.
fn load_panel(
    path: &Path,
    scaling_window: Option<DateRange>,
    command: &str,
    issues: &mut Vec<AssetIssue>,
) -> Result<DailyPanel> {
    let panel = read_panel_csv(path).with_context(|| format!("reading panel {}", path.display()))?;
    log::info!("panel path={} assets={} scaled={}", path.display(), panel.n_assets(), panel.is_scaled());
    match scaling_window {
        None => Ok(panel),
        Some(window) => {
            let out = scale_panel(&panel, window)?;
            for (asset_id, reason) in out.excluded {
                issues.push(AssetIssue {
                    asset_id,
                    model_id: command.to_string(),
                    reason,
                });
            }
            Ok(out.panel)
        }
    }
}

fn finish(mut issues: Vec<AssetIssue>) -> crate::Outcome {
    issues.sort();
    issues.dedup();
    crate::Outcome { issues }
}
