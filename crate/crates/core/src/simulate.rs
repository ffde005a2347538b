//! Synthetic daily panels: exact fractional Gaussian noise, rough (RFSV)
//! log-volatility paths, and QRH feedback dynamics.
//!
//! Per-asset randomness comes from [`sub_seed`], so assets can be generated
//! in any order or in parallel and still reproduce bit for bit.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::panel::{DailyPanel, DailyRecord};
use crate::qrh::{KernelApprox, QrhState};

/// Steps discarded at the start of every QRH simulation.
pub const DEFAULT_QRH_BURN_IN: usize = 500;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` derived from `seed`: the `(index + 1)`-th output of
/// a SplitMix64 generator started at `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbmSpec {
    pub hurst: f64,
    pub n_steps: usize,
    #[serde(default = "one")]
    pub dt: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl FbmSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::InvalidParameter(format!("hurst {} outside (0, 1)", self.hurst)));
        }
        if self.n_steps < 2 {
            return Err(Error::InvalidParameter("n_steps must be at least 2".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt {} must be positive", self.dt)));
        }
        Ok(())
    }
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgnMethod {
    CirculantEmbedding,
    Cholesky,
}

/// Exact fGn sample of length `n_steps` with step `dt`, deterministic in the
/// seed. Uses circulant embedding and falls back to a dense Cholesky factor
/// if the embedding has a negative eigenvalue.
pub fn sample_fgn(spec: &FbmSpec) -> Result<Vec<f64>> {
    sample_fgn_with(spec, FgnMethod::CirculantEmbedding)
}

pub fn sample_fgn_with(spec: &FbmSpec, method: FgnMethod) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    match method {
        FgnMethod::CirculantEmbedding => match circulant_eigenvalues(spec.hurst, spec.n_steps) {
            Some(eig) => Ok(circulant_sample(&eig, spec, &mut rng)),
            None => {
                log::warn!(
                    "fgn circulant embedding has a negative eigenvalue hurst={} n={}; using cholesky",
                    spec.hurst,
                    spec.n_steps
                );
                Ok(FgnCholesky::new(spec.hurst, spec.n_steps, spec.dt)?.sample(&mut rng))
            }
        },
        FgnMethod::Cholesky => {
            Ok(FgnCholesky::new(spec.hurst, spec.n_steps, spec.dt)?.sample(&mut rng))
        }
    }
}

/// Eigenvalues of the size-`2m` circulant embedding (`m = next power of two
/// ≥ n`), or `None` if any is materially negative.
fn circulant_eigenvalues(hurst: f64, n: usize) -> Option<Vec<f64>> {
    let m = n.next_power_of_two();
    let size = 2 * m;
    let mut row: Vec<Complex<f64>> = (0..size)
        .map(|j| {
            let lag = if j <= m { j } else { size - j };
            Complex::new(fgn_autocovariance(hurst, lag), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(size).process(&mut row);
    let max = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let mut eig = Vec::with_capacity(size);
    for c in row {
        if c.re < -1e-10 * max {
            return None;
        }
        eig.push(c.re.max(0.0));
    }
    Some(eig)
}

fn circulant_sample<R: Rng>(eig: &[f64], spec: &FbmSpec, rng: &mut R) -> Vec<f64> {
    let size = eig.len();
    let mut buf: Vec<Complex<f64>> = eig
        .iter()
        .map(|&l| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(re, im) * (l / size as f64).sqrt()
        })
        .collect();
    FftPlanner::new().plan_fft_forward(size).process(&mut buf);
    let scale = spec.dt.powf(spec.hurst);
    buf[..spec.n_steps].iter().map(|c| c.re * scale).collect()
}

/// Dense Cholesky sampler, O(n³) to build. Reusable across seeds.
#[derive(Debug, Clone)]
pub struct FgnCholesky {
    n: usize,
    lower: Vec<f64>,
    scale: f64,
}

impl FgnCholesky {
    pub fn new(hurst: f64, n: usize, dt: f64) -> Result<Self> {
        let acov: Vec<f64> = (0..n).map(|k| fgn_autocovariance(hurst, k)).collect();
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cov[i * n + j] = acov[i.abs_diff(j)];
            }
        }
        let lower = cholesky(&cov, n).ok_or_else(|| {
            Error::NonFinite(format!("fGn covariance not positive definite (H = {hurst}, n = {n})"))
        })?;
        Ok(Self {
            n,
            lower,
            scale: dt.powf(hurst),
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        (0..self.n)
            .map(|i| {
                let row = &self.lower[i * self.n..i * self.n + i + 1];
                row.iter().zip(&z).map(|(l, z)| l * z).sum::<f64>() * self.scale
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfsvSimSpec {
    pub fbm: FbmSpec,
    pub nu: f64,
    #[serde(default)]
    pub log_vol_mean: f64,
}

/// Consecutive weekdays starting at (or after) `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}

pub fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date")
}

fn asset_name(i: usize) -> String {
    format!("SIM{i:04}")
}

/// Log-volatility `log_vol_mean + ν W^H_t` with independent Gaussian return
/// shocks `r_t = σ_t ε_t`. The panel is returned unscaled.
pub fn simulate_rfsv_panel(
    spec: &RfsvSimSpec,
    n_assets: usize,
    start: NaiveDate,
) -> Result<DailyPanel> {
    spec.fbm.validate()?;
    if !(spec.nu >= 0.0 && spec.nu.is_finite()) {
        return Err(Error::InvalidParameter(format!("nu {} must be nonnegative", spec.nu)));
    }
    if n_assets == 0 {
        return Err(Error::InvalidParameter("n_assets must be positive".into()));
    }
    let n = spec.fbm.n_steps;
    let eig = circulant_eigenvalues(spec.fbm.hurst, n);
    let chol = match eig {
        Some(_) => None,
        None => Some(FgnCholesky::new(spec.fbm.hurst, n, spec.fbm.dt)?),
    };
    let dates = business_days(start, n);
    let assets: Vec<(String, Vec<DailyRecord>)> = (0..n_assets)
        .into_par_iter()
        .map(|i| {
            let asset_seed = sub_seed(spec.fbm.seed, i as u64);
            let fbm = FbmSpec { seed: sub_seed(asset_seed, 0), ..spec.fbm };
            let mut rng = rng_from_seed(fbm.seed);
            let noise = match (&eig, &chol) {
                (Some(e), _) => circulant_sample(e, &fbm, &mut rng),
                (None, Some(c)) => c.sample(&mut rng),
                (None, None) => unreachable!(),
            };
            let mut eps_rng = rng_from_seed(sub_seed(asset_seed, 1));
            let mut w = 0.0;
            let records = noise
                .iter()
                .zip(&dates)
                .map(|(dw, &date)| {
                    w += dw;
                    let sigma = (spec.log_vol_mean + spec.nu * w).exp();
                    let eps: f64 = eps_rng.sample(StandardNormal);
                    DailyRecord { date, rv: sigma, ret: sigma * eps }
                })
                .collect();
            (asset_name(i), records)
        })
        .collect();
    DailyPanel::new(assets.into_iter().collect(), BTreeMap::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QrhSimSpec {
    pub kernel: KernelApprox,
    pub a: f64,
    pub b: f64,
    pub c_qrh: f64,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    DEFAULT_QRH_BURN_IN
}

impl QrhSimSpec {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.a >= 0.0 && self.c_qrh > 0.0 && self.b.is_finite() && self.a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "QRH simulation needs a >= 0, c > 0 (a = {}, c = {})",
                self.a, self.c_qrh
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Return shocks driving a QRH path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shocks {
    Gaussian,
    /// All `ε_t = 0`; the factors then only decay.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrhPath {
    pub sigma: Vec<f64>,
    /// Aggregate factor `Z_{t-1}` that produced `sigma[t]`.
    pub z_prev: Vec<f64>,
    pub ret: Vec<f64>,
}

/// Forward simulation of `σ_t² = a (Z_{t-1} - b)² + c`, `r_t = σ_t ε_t`,
/// from zero factors; the first `burn_in` steps are dropped.
pub fn simulate_qrh_path(spec: &QrhSimSpec, seed: u64, shocks: Shocks) -> Result<QrhPath> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let decays = spec.kernel.decays();
    let mut state = QrhState::zeros(spec.kernel.n_factors);
    let total = spec.burn_in + spec.n_steps;
    let mut path = QrhPath {
        sigma: Vec::with_capacity(spec.n_steps),
        z_prev: Vec::with_capacity(spec.n_steps),
        ret: Vec::with_capacity(spec.n_steps),
    };
    for t in 0..total {
        let sigma = (spec.a * (state.z - spec.b).powi(2) + spec.c_qrh).sqrt();
        let eps: f64 = match shocks {
            Shocks::Gaussian => rng.sample(StandardNormal),
            Shocks::Zero => 0.0,
        };
        let r = sigma * eps;
        if t >= spec.burn_in {
            path.sigma.push(sigma);
            path.z_prev.push(state.z);
            path.ret.push(r);
        }
        state.step(r, &decays, &spec.kernel.weights);
    }
    if path.sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("QRH simulation diverged".into()));
    }
    Ok(path)
}

/// Self-exciting panel with volatility driven by past returns. Unscaled.
pub fn simulate_qrh_panel(spec: &QrhSimSpec, n_assets: usize, start: NaiveDate) -> Result<DailyPanel> {
    spec.validate()?;
    if n_assets == 0 {
        return Err(Error::InvalidParameter("n_assets must be positive".into()));
    }
    let dates = business_days(start, spec.n_steps);
    let assets: Vec<Result<(String, Vec<DailyRecord>)>> = (0..n_assets)
        .into_par_iter()
        .map(|i| {
            let path = simulate_qrh_path(spec, sub_seed(spec.seed, i as u64), Shocks::Gaussian)?;
            let records = dates
                .iter()
                .zip(path.sigma.iter().zip(&path.ret))
                .map(|(&date, (&rv, &ret))| DailyRecord { date, rv, ret })
                .collect();
            Ok((asset_name(i), records))
        })
        .collect();
    let assets = assets.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
    DailyPanel::new(assets, BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrh::KernelConfig;

    fn sample_autocov(x: &[f64], lag: usize) -> f64 {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
    }

    #[test]
    fn brownian_increments_are_uncorrelated() {
        let x = sample_fgn(&FbmSpec { hurst: 0.5, n_steps: 1 << 14, dt: 1.0, seed: 7 }).unwrap();
        let rho = sample_autocov(&x, 1) / sample_autocov(&x, 0);
        assert!(rho.abs() < 0.02, "lag-1 autocorrelation {rho}");
    }

    #[test]
    fn rough_lag_one_correlation() {
        let expect = 0.5 * (2f64.powf(0.2) - 2.0);
        assert!((fgn_autocovariance(0.1, 1) - expect).abs() < 1e-15);
        assert!((expect + 0.4257).abs() < 1e-3);
        let x = sample_fgn(&FbmSpec { hurst: 0.1, n_steps: 1 << 14, dt: 1.0, seed: 11 }).unwrap();
        let rho = sample_autocov(&x, 1) / sample_autocov(&x, 0);
        assert!((rho - expect).abs() < 0.03, "rho {rho} vs {expect}");
    }

    #[test]
    fn fgn_is_deterministic_and_scales_with_dt() {
        let spec = FbmSpec { hurst: 0.3, n_steps: 1000, dt: 1.0, seed: 99 };
        let a = sample_fgn(&spec).unwrap();
        let b = sample_fgn(&spec).unwrap();
        assert_eq!(a, b);
        let c = sample_fgn(&FbmSpec { dt: 4.0, ..spec }).unwrap();
        let k = 4f64.powf(0.3);
        assert!(a.iter().zip(&c).all(|(x, y)| (x * k - y).abs() < 1e-12));
        let d = sample_fgn(&FbmSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn invalid_fbm_specs() {
        for spec in [
            FbmSpec { hurst: 0.0, n_steps: 10, dt: 1.0, seed: 0 },
            FbmSpec { hurst: 1.0, n_steps: 10, dt: 1.0, seed: 0 },
            FbmSpec { hurst: 0.2, n_steps: 1, dt: 1.0, seed: 0 },
            FbmSpec { hurst: 0.2, n_steps: 10, dt: 0.0, seed: 0 },
        ] {
            assert!(sample_fgn(&spec).is_err());
        }
    }

    #[test]
    fn sub_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| sub_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(sub_seed(42, 3), sub_seed(42, 3));
    }

    #[test]
    fn rfsv_panel_basics() {
        let spec = RfsvSimSpec {
            fbm: FbmSpec { hurst: 0.1, n_steps: 300, dt: 1.0, seed: 5 },
            nu: 0.0,
            log_vol_mean: -1.0,
        };
        let p = simulate_rfsv_panel(&spec, 2, default_start_date()).unwrap();
        assert!(!p.is_scaled());
        for (_, recs) in p.iter() {
            assert!(recs.iter().all(|r| (r.rv - (-1f64).exp()).abs() < 1e-15));
        }
        let spec = RfsvSimSpec { nu: 0.3, ..spec };
        let p = simulate_rfsv_panel(&spec, 3, default_start_date()).unwrap();
        let paths: Vec<Vec<f64>> = p.iter().map(|(_, r)| r.iter().map(|x| x.rv).collect()).collect();
        assert_ne!(paths[0], paths[1]);
        assert_ne!(paths[1], paths[2]);
        assert_ne!(paths[0], paths[2]);
        assert_eq!(p, simulate_rfsv_panel(&spec, 3, default_start_date()).unwrap());
    }

    #[test]
    fn business_days_skip_weekends() {
        let days = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(days[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
    }

    #[test]
    fn qrh_flat_when_a_is_zero() {
        let kernel = KernelConfig::default().build().unwrap();
        let spec = QrhSimSpec { kernel, a: 0.0, b: 0.74, c_qrh: 0.55, n_steps: 200, seed: 1, burn_in: 10 };
        let path = simulate_qrh_path(&spec, 3, Shocks::Gaussian).unwrap();
        assert!(path.sigma.iter().all(|s| *s == 0.55f64.sqrt()));
    }

    #[test]
    fn qrh_zero_shocks_converge_to_vertex_value() {
        let kernel = KernelConfig::default().build().unwrap();
        let spec = QrhSimSpec { kernel, a: 0.043, b: 0.74, c_qrh: 0.55, n_steps: 300, seed: 1, burn_in: 0 };
        let path = simulate_qrh_path(&spec, 3, Shocks::Zero).unwrap();
        let limit = 0.043 * 0.74f64.powi(2) + 0.55;
        assert!(path.sigma.iter().all(|s| (s * s - limit).abs() < 1e-15));
        assert!(path.z_prev.iter().all(|z| *z == 0.0));
    }

    #[test]
    fn qrh_variance_self_consistency() {
        let kernel = KernelConfig::default().build().unwrap();
        let (a, b, c) = (0.043, 0.74, 0.55);
        let spec = QrhSimSpec { kernel, a, b, c_qrh: c, n_steps: 100_000, seed: 2024, burn_in: 500 };
        let path = simulate_qrh_path(&spec, 17, Shocks::Gaussian).unwrap();
        let n = path.sigma.len() as f64;
        let mean_var = path.sigma.iter().map(|s| s * s).sum::<f64>() / n;
        let implied = a * path.z_prev.iter().map(|z| (z - b).powi(2)).sum::<f64>() / n + c;
        assert!((mean_var / implied - 1.0).abs() < 0.02);
    }
}
