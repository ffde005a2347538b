//! AR(p) and HAR forecasters fitted by ordinary least squares.
//!
//! Lags count backwards from the forecast date: `betas[0]` multiplies
//! yesterday's volatility `σ_{t-1}`. Inputs are always ordered oldest to
//! newest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::NormalEquations;

/// Longest HAR lag (one trading month).
pub const HAR_MAX_LAG: usize = 22;
const HAR_WEEK: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearKind {
    Ar { p: usize },
    Har,
}

impl LinearKind {
    pub fn max_lag(&self) -> usize {
        match *self {
            LinearKind::Ar { p } => p,
            LinearKind::Har => HAR_MAX_LAG,
        }
    }

    pub fn n_betas(&self) -> usize {
        match *self {
            LinearKind::Ar { p } => p,
            LinearKind::Har => 3,
        }
    }

    /// Regressors for the day after `recent`, whose last element is `σ_{t-1}`.
    fn regressors(&self, recent: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let n = recent.len();
        match *self {
            LinearKind::Ar { p } => out.extend(recent[n - p..].iter().rev()),
            LinearKind::Har => {
                let week = recent[n - HAR_WEEK..].iter().sum::<f64>() / HAR_WEEK as f64;
                let month = recent[n - HAR_MAX_LAG..].iter().sum::<f64>() / HAR_MAX_LAG as f64;
                out.extend([recent[n - 1], week, month]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCoeffs {
    pub model_kind: LinearKind,
    pub intercept: f64,
    pub betas: Vec<f64>,
    /// Number of regression rows in the fitting window.
    pub rows: usize,
    /// Set when the normal equations were singular and a ridge was added.
    pub ridge_applied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub window_len: usize,
    pub refit_every: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: 1000,
            refit_every: 1,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self, max_lag: usize) -> Result<()> {
        if self.refit_every == 0 {
            return Err(Error::InvalidParameter("refit_every must be positive".into()));
        }
        if self.window_len <= max_lag {
            return Err(Error::InvalidParameter(format!(
                "window_len {} must exceed the longest lag {max_lag}",
                self.window_len
            )));
        }
        Ok(())
    }
}

fn fit(kind: LinearKind, history: &[f64]) -> Result<LinearCoeffs> {
    let lag = kind.max_lag();
    if lag == 0 {
        return Err(Error::InvalidParameter("AR order must be positive".into()));
    }
    if history.len() < 2 * lag + 1 {
        return Err(Error::InsufficientHistory(format!(
            "{kind:?} needs at least {} observations, got {}",
            2 * lag + 1,
            history.len()
        )));
    }
    if let Some(x) = history.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("history contains {x}")));
    }
    let dim = kind.n_betas() + 1;
    let mut ne = NormalEquations::new(dim);
    let mut reg = Vec::with_capacity(dim);
    let mut row = vec![0.0; dim];
    for t in lag..history.len() {
        kind.regressors(&history[t - lag..t], &mut reg);
        row[0] = 1.0;
        row[1..].copy_from_slice(&reg);
        ne.add_row(&row, history[t]);
    }
    let sol = ne.solve();
    if sol.ridge_applied {
        log::warn!("linear_fit kind={kind:?} ridge_applied=true rows={}", ne.rows());
    }
    Ok(LinearCoeffs {
        model_kind: kind,
        intercept: sol.coeffs[0],
        betas: sol.coeffs[1..].to_vec(),
        rows: ne.rows(),
        ridge_applied: sol.ridge_applied,
    })
}

pub fn fit_ar(history: &[f64], p: usize) -> Result<LinearCoeffs> {
    fit(LinearKind::Ar { p }, history)
}

pub fn fit_har(history: &[f64]) -> Result<LinearCoeffs> {
    fit(LinearKind::Har, history)
}

/// Affine forecast for the day after `recent`. Negative values are returned
/// as is.
pub fn forecast_linear(coeffs: &LinearCoeffs, recent: &[f64]) -> Result<f64> {
    let lag = coeffs.model_kind.max_lag();
    if recent.len() < lag {
        return Err(Error::InsufficientHistory(format!(
            "forecast needs {lag} recent values, got {}",
            recent.len()
        )));
    }
    if coeffs.betas.len() != coeffs.model_kind.n_betas() {
        return Err(Error::InvalidParameter("coefficient count does not match model".into()));
    }
    let mut reg = Vec::with_capacity(coeffs.betas.len());
    coeffs.model_kind.regressors(recent, &mut reg);
    Ok(coeffs.intercept + reg.iter().zip(&coeffs.betas).map(|(x, b)| x * b).sum::<f64>())
}

/// Mean squared one-step error over the rows the model was fitted on.
pub fn in_sample_mse(coeffs: &LinearCoeffs, history: &[f64]) -> Result<f64> {
    let lag = coeffs.model_kind.max_lag();
    let mut sse = 0.0;
    for t in lag..history.len() {
        let e = forecast_linear(coeffs, &history[..t])? - history[t];
        sse += e * e;
    }
    Ok(sse / (history.len() - lag) as f64)
}
