//! Rough fractional stochastic volatility: Hurst estimation from the scaling
//! of log-volatility increments, and the associated forecaster.
//!
//! The predictor is a power-law weighted average of past log-volatility,
//!
//! ```text
//! log σ̂_t = cos(Hπ)/π ∫_{-∞}^{t-1} log σ_s / ((t-s+1)(t-s)^{H+1/2}) ds
//! σ̂_t     = c · exp(log σ̂_t)
//! ```
//!
//! truncated to a finite history. Log-volatility is taken as constant over
//! each day, so lag `k` receives the exact integral of the kernel over
//! `u = t - s ∈ [k, k+1]`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::panel::DailyPanel;
use crate::series::{ForecastEntry, ForecastSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstFit {
    pub hurst: f64,
    pub nu: f64,
    pub c_rfsv: f64,
    pub lags_used: Vec<usize>,
    /// Moment order whose intercept gives `ν`.
    pub q_used: f64,
    /// Coefficient of determination of that regression.
    pub r2: f64,
    /// Per-order log-log slopes, `≈ q H`.
    pub slopes: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HurstConfig {
    pub q_set: Vec<f64>,
    pub lags: Vec<usize>,
}

impl Default for HurstConfig {
    fn default() -> Self {
        Self {
            q_set: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            lags: (1..=50).collect(),
        }
    }
}

/// `exp(Γ(3/2 - H) / (2 Γ(H + 1/2) Γ(2 - 2H)) ν²)`.
pub fn rfsv_correction(hurst: f64, nu: f64) -> f64 {
    let k = gamma(1.5 - hurst) / (2.0 * gamma(hurst + 0.5) * gamma(2.0 - 2.0 * hurst));
    (k * nu * nu).exp()
}

#[inline]
fn abs_pow(x: f64, q: f64) -> f64 {
    let x = x.abs();
    if q == 1.0 {
        x
    } else if q == 2.0 {
        x * x
    } else if q == 0.5 {
        x.sqrt()
    } else if q == 1.5 {
        x * x.sqrt()
    } else if q == 3.0 {
        x * x * x
    } else {
        x.powf(q)
    }
}

fn check_lags(len: usize, lags: &[usize]) -> Result<()> {
    let Some(&max) = lags.iter().max() else {
        return Err(Error::InvalidParameter("empty lag list".into()));
    };
    if lags.contains(&0) {
        return Err(Error::InvalidParameter("lags must be positive".into()));
    }
    if 2 * max >= len {
        return Err(Error::InsufficientHistory(format!(
            "largest lag {max} must be below half the series length {len}"
        )));
    }
    Ok(())
}

/// Empirical `m_q(l) = mean_t |x_{t+l} - x_t|^q` for each lag.
pub fn structure_function(logvol: &[f64], q: f64, lags: &[usize]) -> Result<Vec<(usize, f64)>> {
    if !(q > 0.0) {
        return Err(Error::InvalidParameter(format!("moment order {q} must be positive")));
    }
    Ok(structure_functions(logvol, &[q], lags)?.remove(0))
}

/// All orders at once; result is indexed `[q][lag]`.
fn structure_functions(logvol: &[f64], qs: &[f64], lags: &[usize]) -> Result<Vec<Vec<(usize, f64)>>> {
    check_lags(logvol.len(), lags)?;
    let mut out = vec![Vec::with_capacity(lags.len()); qs.len()];
    let mut sums = vec![0.0; qs.len()];
    for &l in lags {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (a, b) in logvol.iter().zip(&logvol[l..]) {
            let d = b - a;
            for (s, &q) in sums.iter_mut().zip(qs) {
                *s += abs_pow(d, q);
            }
        }
        let n = (logvol.len() - l) as f64;
        for (o, s) in out.iter_mut().zip(&sums) {
            o.push((l, s / n));
        }
    }
    Ok(out)
}

struct LineFit {
    slope: f64,
    intercept: f64,
    r2: f64,
}

fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    LineFit {
        slope,
        intercept: my - slope * mx,
        r2,
    }
}

/// Regresses `log m_q(l)` on `log l` for every order: the slope is `qH` and
/// the intercept `q log ν` (exactly so for `q = 2`). `H` averages `slope/q`
/// over `q_set`; `ν` comes from the `q = 2` regression.
pub fn estimate_hurst(logvol: &[f64], q_set: &[f64], lags: &[usize]) -> Result<HurstFit> {
    if q_set.is_empty() || q_set.iter().any(|q| !(*q > 0.0)) {
        return Err(Error::InvalidParameter("q_set must hold positive orders".into()));
    }
    let mut distinct = lags.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidParameter("at least two distinct lags are needed".into()));
    }
    if logvol.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSeries("log-volatility contains non-finite values".into()));
    }
    let mut qs = q_set.to_vec();
    let nu_index = match qs.iter().position(|&q| q == 2.0) {
        Some(i) => i,
        None => {
            qs.push(2.0);
            qs.len() - 1
        }
    };
    let moments = structure_functions(logvol, &qs, &distinct)?;
    let log_l: Vec<f64> = distinct.iter().map(|&l| (l as f64).ln()).collect();
    let mut fits = Vec::with_capacity(qs.len());
    for (q, m) in qs.iter().zip(&moments) {
        if let Some((l, _)) = m.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::DegenerateSeries(format!("m_{q}({l}) = 0")));
        }
        let log_m: Vec<f64> = m.iter().map(|(_, v)| v.ln()).collect();
        fits.push((*q, fit_line(&log_l, &log_m)));
    }
    let hurst = fits[..q_set.len()].iter().map(|(q, f)| f.slope / q).sum::<f64>() / q_set.len() as f64;
    let nu_fit = &fits[nu_index].1;
    let nu = (nu_fit.intercept / 2.0).exp();
    if !hurst.is_finite() || !nu.is_finite() {
        return Err(Error::DegenerateSeries("non-finite scaling fit".into()));
    }
    Ok(HurstFit {
        hurst,
        nu,
        c_rfsv: rfsv_correction(hurst, nu),
        lags_used: distinct,
        q_used: 2.0,
        r2: nu_fit.r2,
        slopes: fits[..q_set.len()].iter().map(|(q, f)| (*q, f.slope)).collect(),
    })
}

pub fn estimate_hurst_with(logvol: &[f64], config: &HurstConfig) -> Result<HurstFit> {
    estimate_hurst(logvol, &config.q_set, &config.lags)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfsvParams {
    pub hurst: f64,
    pub c_rfsv: f64,
}

impl RfsvParams {
    /// Median estimates reported across US equities.
    pub const UNIVERSAL: RfsvParams = RfsvParams {
        hurst: 0.055,
        c_rfsv: 1.03,
    };
}

impl From<&HurstFit> for RfsvParams {
    fn from(fit: &HurstFit) -> Self {
        Self {
            hurst: fit.hurst,
            c_rfsv: fit.c_rfsv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfsvForecastConfig {
    pub truncation_len: usize,
    pub renormalize_weights: bool,
    pub fixed_params: Option<RfsvParams>,
}

impl Default for RfsvForecastConfig {
    fn default() -> Self {
        Self {
            truncation_len: 500,
            renormalize_weights: true,
            fixed_params: None,
        }
    }
}

impl RfsvForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation_len < 22 {
            return Err(Error::InvalidParameter(format!(
                "truncation_len {} must be at least 22",
                self.truncation_len
            )));
        }
        Ok(())
    }
}

const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_3,
    0.219_086_362_515_982_0,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

fn kernel_density(u: f64, hurst: f64) -> f64 {
    1.0 / ((u + 1.0) * u.powf(hurst + 0.5))
}

/// `∫_k^{k+1} du / ((u+1) u^{H+1/2})` by 10-point Gauss–Legendre.
fn cell_integral(k: usize, hurst: f64) -> f64 {
    let mid = k as f64 + 0.5;
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(x, w)| w * (kernel_density(mid - 0.5 * x, hurst) + kernel_density(mid + 0.5 * x, hurst)))
        .sum::<f64>()
        * 0.5
}

/// Lag weights `w_1..w_T` of the truncated predictor.
pub fn rfsv_weights(hurst: f64, truncation_len: usize, renormalize: bool) -> Result<Vec<f64>> {
    check_hurst(hurst)?;
    let prefactor = (hurst * PI).cos() / PI;
    let mut w: Vec<f64> = (1..=truncation_len).map(|k| prefactor * cell_integral(k, hurst)).collect();
    if renormalize {
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
    }
    Ok(w)
}

fn check_hurst(hurst: f64) -> Result<()> {
    if hurst >= 0.5 {
        return Err(Error::PredictorUndefined(format!("hurst {hurst} >= 1/2")));
    }
    if !(hurst > 0.0) {
        return Err(Error::InvalidParameter(format!("hurst {hurst} must be positive")));
    }
    Ok(())
}

/// Precomputed predictor for fixed `(H, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfsvPredictor {
    params: RfsvParams,
    weights: Vec<f64>,
}

impl RfsvPredictor {
    pub fn new(params: RfsvParams, config: &RfsvForecastConfig) -> Result<Self> {
        config.validate()?;
        if !(params.c_rfsv > 0.0 && params.c_rfsv.is_finite()) {
            return Err(Error::InvalidParameter(format!("c_rfsv {} must be positive", params.c_rfsv)));
        }
        Ok(Self {
            params,
            weights: rfsv_weights(params.hurst, config.truncation_len, config.renormalize_weights)?,
        })
    }

    pub fn params(&self) -> RfsvParams {
        self.params
    }

    pub fn truncation_len(&self) -> usize {
        self.weights.len()
    }

    /// Forecast for the day after `logvol` (oldest first).
    pub fn predict(&self, logvol: &[f64]) -> Result<f64> {
        let n = logvol.len();
        if n < self.weights.len() {
            return Err(Error::InsufficientHistory(format!(
                "RFSV forecast needs {} days of history, got {n}",
                self.weights.len()
            )));
        }
        let mean: f64 = self
            .weights
            .iter()
            .zip(logvol.iter().rev())
            .map(|(w, x)| w * x)
            .sum();
        Ok(self.params.c_rfsv * mean.exp())
    }
}

pub fn forecast_rfsv(logvol: &[f64], params: RfsvParams, config: &RfsvForecastConfig) -> Result<f64> {
    RfsvPredictor::new(params, config)?.predict(logvol)
}

/// Natural log of each realized volatility; zero volatility is rejected.
pub fn log_rv(rv: &[f64]) -> Result<Vec<f64>> {
    rv.iter()
        .map(|&v| {
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::DegenerateSeries(format!("non-positive realized volatility {v}")))
            }
        })
        .collect()
}

/// Shared-parameter forecasts for every asset and every date that has a full
/// truncation window behind it.
pub fn forecast_rfsv_universal(
    panel: &DailyPanel,
    fixed: RfsvParams,
    config: &RfsvForecastConfig,
) -> Result<BTreeMap<String, ForecastSeries>> {
    let predictor = RfsvPredictor::new(fixed, config)?;
    let trunc = predictor.truncation_len();
    let ids: Vec<&str> = panel.asset_ids().collect();
    let out: Vec<Result<(String, ForecastSeries)>> = ids
        .par_iter()
        .map(|&id| {
            let recs = panel.records(id).unwrap_or_default();
            let rv: Vec<f64> = recs.iter().map(|r| r.rv).collect();
            let logs = log_rv(&rv)?;
            let mut entries = Vec::with_capacity(recs.len().saturating_sub(trunc));
            for t in trunc..recs.len() {
                entries.push(ForecastEntry {
                    date: recs[t].date,
                    predicted: predictor.predict(&logs[t - trunc..t])?,
                    realized: recs[t].rv,
                });
            }
            Ok((id.to_string(), ForecastSeries::new(id, entries)?))
        })
        .collect();
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_function_of_a_line() {
        let nu = 0.37;
        let x: Vec<f64> = (0..200).map(|t| nu * t as f64).collect();
        for (l, m) in structure_function(&x, 2.0, &[1, 3, 10]).unwrap() {
            let expect = (nu * l as f64).powi(2);
            assert!((m - expect).abs() <= 1e-12 * expect);
        }
        let flat = vec![0.4; 100];
        assert!(structure_function(&flat, 1.0, &[1, 2]).unwrap().iter().all(|(_, m)| *m == 0.0));
        assert!(structure_function(&flat, 1.0, &[50]).is_err());
    }

    #[test]
    fn constant_series_is_degenerate() {
        let flat = vec![0.1; 500];
        assert!(matches!(estimate_hurst(&flat, &[1.0, 2.0], &[1, 2, 3]), Err(Error::DegenerateSeries(_))));
    }

    #[test]
    fn correction_is_one_without_vol_of_vol() {
        assert_eq!(rfsv_correction(0.1, 0.0), 1.0);
        assert!(rfsv_correction(0.1, 0.3) > 1.0);
    }

    #[test]
    fn constant_history_is_a_fixed_point() {
        let cfg = RfsvForecastConfig::default();
        let x = 0.3;
        let p = RfsvParams { hurst: 0.12, c_rfsv: 1.07 };
        let got = forecast_rfsv(&vec![x; 600], p, &cfg).unwrap();
        assert!((got - 1.07 * x.exp()).abs() <= 1e-12);
        let got = forecast_rfsv(&vec![1.0; 500], RfsvParams::UNIVERSAL, &cfg).unwrap();
        assert!((got - 1.03 * std::f64::consts::E).abs() <= 1e-12);
    }

    #[test]
    fn predictor_errors() {
        let cfg = RfsvForecastConfig::default();
        assert!(matches!(
            forecast_rfsv(&[0.0; 600], RfsvParams { hurst: 0.5, c_rfsv: 1.0 }, &cfg),
            Err(Error::PredictorUndefined(_))
        ));
        assert!(matches!(
            forecast_rfsv(&[0.0; 100], RfsvParams::UNIVERSAL, &cfg),
            Err(Error::InsufficientHistory(_))
        ));
        let short = RfsvForecastConfig { truncation_len: 10, ..cfg };
        assert!(forecast_rfsv(&[0.0; 100], RfsvParams::UNIVERSAL, &short).is_err());
    }

    #[test]
    fn weights_are_positive_and_decreasing() {
        for h in [0.02, 0.055, 0.1, 0.3, 0.45] {
            for renorm in [false, true] {
                let w = rfsv_weights(h, 500, renorm).unwrap();
                assert!(w.windows(2).all(|p| p[0] > p[1] && p[1] > 0.0));
            }
        }
    }

    #[test]
    fn raw_weight_sum_approaches_full_mass_with_truncation() {
        let short: f64 = rfsv_weights(0.1, 100, false).unwrap().iter().sum();
        let long: f64 = rfsv_weights(0.1, 10_000, false).unwrap().iter().sum();
        assert!(long > short);
        assert!((1.0 - long).abs() < (1.0 - short).abs());
    }

    #[test]
    fn forecast_is_scale_covariant() {
        let logs: Vec<f64> = (0..600).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
        let lambda: f64 = 2.7;
        let shifted: Vec<f64> = logs.iter().map(|x| x + lambda.ln()).collect();
        let cfg = RfsvForecastConfig::default();
        let a = forecast_rfsv(&logs, RfsvParams::UNIVERSAL, &cfg).unwrap();
        let b = forecast_rfsv(&shifted, RfsvParams::UNIVERSAL, &cfg).unwrap();
        assert!((b / a - lambda).abs() < 1e-12);
    }

    /// Composite Simpson in `s = ln u`, independent of the Gauss rule.
    fn simpson_cell(k: usize, h: f64) -> f64 {
        let (a, b) = ((k as f64).ln(), ((k + 1) as f64).ln());
        let n = 2000;
        let step = (b - a) / n as f64;
        let f = |s: f64| {
            let u = s.exp();
            u / ((u + 1.0) * u.powf(h + 0.5))
        };
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * step);
        }
        acc * step / 3.0
    }

    #[test]
    fn weights_match_an_independent_quadrature() {
        for h in [0.055, 0.1, 0.3] {
            let w = rfsv_weights(h, 500, false).unwrap();
            let pref = (h * PI).cos() / PI;
            for k in [1usize, 2, 3, 10, 100, 499] {
                let oracle = pref * simpson_cell(k, h);
                assert!((w[k - 1] - oracle).abs() <= 1e-10, "h={h} k={k}: {} vs {oracle}", w[k - 1]);
            }
        }
    }

    #[test]
    fn renormalized_weights_sum_to_one() {
        let w = rfsv_weights(0.055, 500, true).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forecast_is_monotone_in_history() {
        let base: Vec<f64> = (0..520).map(|i| (i as f64 * 0.3).cos() * 0.2).collect();
        let cfg = RfsvForecastConfig::default();
        let a = forecast_rfsv(&base, RfsvParams::UNIVERSAL, &cfg).unwrap();
        for j in [0usize, 200, 519] {
            let mut up = base.clone();
            up[j] += 0.1;
            let b = forecast_rfsv(&up, RfsvParams::UNIVERSAL, &cfg).unwrap();
            if j < 520 - 500 {
                assert_eq!(a, b, "lag beyond truncation must not matter");
            } else {
                assert!(b > a);
            }
        }
    }

    #[test]
    fn brownian_log_vol_gives_one_half() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut x = 0.0;
        let path: Vec<f64> = (0..20_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x += 0.3 * z;
                x
            })
            .collect();
        let fit = estimate_hurst_with(&path, &HurstConfig::default()).unwrap();
        assert!((fit.hurst - 0.5).abs() < 0.05, "H = {}", fit.hurst);
        assert!((fit.nu - 0.3).abs() < 0.03, "nu = {}", fit.nu);
        assert!(fit.r2 > 0.95);
    }

    #[test]
    fn rough_log_vol_is_recovered() {
        let spec = crate::simulate::FbmSpec {
            hurst: 0.1,
            n_steps: 1 << 14,
            dt: 1.0,
            seed: 3,
        };
        let mut w = 0.0;
        let path: Vec<f64> = crate::simulate::sample_fgn(&spec)
            .unwrap()
            .into_iter()
            .map(|d| {
                w += 0.3 * d;
                w
            })
            .collect();
        let fit = estimate_hurst_with(&path, &HurstConfig::default()).unwrap();
        assert!((fit.hurst - 0.1).abs() < 0.03, "H = {}", fit.hurst);
        assert!((fit.nu - 0.3).abs() < 0.05, "nu = {}", fit.nu);
    }
}
