//! Quadratic rough Heston forecaster.
//!
//! Past returns are filtered through a sum of exponentials approximating the
//! power-law kernel `K(t) = t^{H-1/2} / Γ(H+1/2)`, which gives a Markovian
//! factor state `Z_i` updated once per day:
//!
//! ```text
//! Z_{i,t} = exp(-γ_i) Z_{i,t-1} + r_t,     Z_t = Σ_i c_i Z_{i,t}
//! σ̂_t²   = a (Z_{t-1} - b)² + c
//! ```
//!
//! With `b > 0` a falling price (negative `Z`) raises the forecast more than
//! a rising one, which is the Zumbach feedback the model encodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::NormalEquations;
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Trading days per year, used to convert annual kernel rates to daily ones.
pub const DAYS_PER_YEAR: f64 = 250.0;

/// Burn-in (days) discarded before calibrating on a window.
pub const DEFAULT_CALIBRATION_BURN_IN: usize = 250;

/// Multi-factor approximation of the rough kernel: normalized weights and
/// daily mean-reversion rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelApprox {
    pub hurst: f64,
    pub n_factors: usize,
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
}

/// Parameters of [`build_kernel_approx`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub hurst: f64,
    pub n_factors: usize,
    /// `(γ_min, γ_max)` in units of 1/year.
    pub rate_bounds: (f64, f64),
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            hurst: 0.1,
            n_factors: 20,
            rate_bounds: (1e-4, 1e3),
        }
    }
}

impl KernelConfig {
    pub fn build(&self) -> Result<KernelApprox> {
        build_kernel_approx(self.hurst, self.n_factors, self.rate_bounds)
    }
}

/// Geometric partition of `[γ_min, γ_max]` (per year) into `n_factors` cells.
/// Each cell contributes the mass of `γ^{-H-1/2} dγ` over it as weight and
/// the mass-weighted mean rate as its rate. Weights are normalized to sum to
/// one and rates are converted to daily units.
pub fn build_kernel_approx(
    hurst: f64,
    n_factors: usize,
    rate_bounds: (f64, f64),
) -> Result<KernelApprox> {
    if hurst == 0.5 {
        return Err(Error::KernelDegenerate("H = 1/2 gives a flat kernel".into()));
    }
    if !(hurst > 0.0 && hurst < 0.5) {
        return Err(Error::InvalidParameter(format!("kernel hurst {hurst} outside (0, 1/2)")));
    }
    if n_factors == 0 {
        return Err(Error::InvalidParameter("n_factors must be positive".into()));
    }
    let (lo, hi) = rate_bounds;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "rate bounds must satisfy 0 < γ_min < γ_max, got ({lo}, {hi})"
        )));
    }
    let alpha = 0.5 - hurst;
    let ratio = hi / lo;
    let eta: Vec<f64> = (0..=n_factors)
        .map(|i| lo * ratio.powf(i as f64 / n_factors as f64))
        .collect();
    let mut weights = Vec::with_capacity(n_factors);
    let mut rates = Vec::with_capacity(n_factors);
    for w in eta.windows(2) {
        let mass = (w[1].powf(alpha) - w[0].powf(alpha)) / alpha;
        let first = (w[1].powf(alpha + 1.0) - w[0].powf(alpha + 1.0)) / (alpha + 1.0);
        weights.push(mass);
        rates.push(first / mass / DAYS_PER_YEAR);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(KernelApprox {
        hurst,
        n_factors,
        weights,
        rates,
    })
}

impl KernelApprox {
    /// Kernel from explicit weights and daily rates; weights must sum to one.
    pub fn from_parts(hurst: f64, weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        let k = KernelApprox {
            hurst,
            n_factors: weights.len(),
            weights,
            rates,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty()
            || self.weights.len() != self.n_factors
            || self.rates.len() != self.n_factors
        {
            return Err(Error::InvalidParameter("kernel shape mismatch".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "kernel weights must be positive and sum to 1 (sum = {sum})"
            )));
        }
        if self.rates.iter().any(|r| !(*r >= 0.0 && r.is_finite()))
            || self.rates.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidParameter(
                "kernel rates must be nonnegative and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Per-step decay factors `exp(-γ_i)`.
    pub fn decays(&self) -> Vec<f64> {
        self.rates.iter().map(|g| (-g).exp()).collect()
    }

    /// `Σ c_i exp(-γ_i t)` for a lag `t` in days.
    pub fn evaluate(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(c, g)| c * (-g * t).exp())
            .sum()
    }
}

/// Factor state; `z` is always the weighted sum of `factors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrhState {
    pub factors: Vec<f64>,
    pub z: f64,
}

impl QrhState {
    pub fn zeros(n_factors: usize) -> Self {
        Self {
            factors: vec![0.0; n_factors],
            z: 0.0,
        }
    }

    pub fn from_factors(factors: Vec<f64>, kernel: &KernelApprox) -> Self {
        let z = weighted_sum(&factors, &kernel.weights);
        Self { factors, z }
    }

    /// In-place version of [`update_z`] with precomputed decays.
    pub fn step(&mut self, ret: f64, decays: &[f64], weights: &[f64]) {
        for (f, d) in self.factors.iter_mut().zip(decays) {
            *f = d * *f + ret;
        }
        self.z = weighted_sum(&self.factors, weights);
    }
}

fn weighted_sum(factors: &[f64], weights: &[f64]) -> f64 {
    factors.iter().zip(weights).map(|(f, w)| f * w).sum()
}

/// One day of the factor recursion.
pub fn update_z(state: &QrhState, ret: f64, kernel: &KernelApprox) -> QrhState {
    let mut next = state.clone();
    next.step(ret, &kernel.decays(), &kernel.weights);
    next
}

/// Aggregate `Z_{t-1}` seen before each day, starting from zero factors.
/// Entry `t` is the state after returns `0..t`.
pub fn z_path(returns: &[f64], kernel: &KernelApprox) -> Vec<f64> {
    let decays = kernel.decays();
    let mut state = QrhState::zeros(kernel.n_factors);
    let mut out = Vec::with_capacity(returns.len());
    for &r in returns {
        out.push(state.z);
        state.step(r, &decays, &kernel.weights);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QrhParams {
    pub a: f64,
    pub b: f64,
    pub c_qrh: f64,
}

impl QrhParams {
    /// Median calibrated values reported for US equities.
    pub const UNIVERSAL: QrhParams = QrhParams {
        a: 0.043,
        b: 0.74,
        c_qrh: 0.55,
    };

    pub fn new(a: f64, b: f64, c_qrh: f64) -> Result<Self> {
        let p = Self { a, b, c_qrh };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.a.is_finite() && self.c_qrh > 0.0 && self.c_qrh.is_finite())
            || !self.b.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "QRH parameters need a >= 0, c > 0, finite b; got {self:?}"
            )));
        }
        Ok(())
    }

    /// `sqrt(a (z - b)² + c)`.
    pub fn forecast_at(&self, z: f64) -> f64 {
        (self.a * (z - self.b).powi(2) + self.c_qrh).sqrt()
    }
}

pub fn forecast_qrh(params: &QrhParams, state: &QrhState) -> f64 {
    params.forecast_at(state.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendConfig {
    pub lambda: f64,
}

impl BlendConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!("blend lambda {lambda} outside [0, 1]")));
        }
        Ok(Self { lambda })
    }
}

/// `(1 - λ) σ̂_rfsv + λ σ̂_qrh`, in volatility units.
pub fn forecast_blend(rfsv_pred: f64, qrh_pred: f64, blend: BlendConfig) -> f64 {
    if blend.lambda == 0.0 {
        return rfsv_pred;
    }
    if blend.lambda == 1.0 {
        return qrh_pred;
    }
    (1.0 - blend.lambda) * rfsv_pred + blend.lambda * qrh_pred
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrhCalibration {
    pub params: QrhParams,
    /// `Σ (σ̂_t - σ_t)²` over the retained samples.
    pub objective: f64,
    pub samples: usize,
    /// False when the simplex refinement hit its evaluation budget.
    pub converged: bool,
    /// True when the quadratic regression gave a usable starting point.
    pub regression_seed: bool,
}

/// Volatility-space objective for a parameter vector `(ln a, b, ln c)`.
fn objective(z: &[f64], sigma: &[f64], a: f64, b: f64, c: f64) -> f64 {
    z.iter()
        .zip(sigma)
        .map(|(&z, &s)| {
            let e = (a * (z - b).powi(2) + c).sqrt() - s;
            e * e
        })
        .sum()
}

/// Fits `(a, b, c)` on one window of realized volatility and returns.
///
/// Factors start at zero at the beginning of the window and the first
/// `burn_in` samples are discarded. A regression of `σ²` on `(1, Z, Z²)`
/// seeds a simplex search over `(ln a, b, ln c)` that minimizes the squared
/// error of `σ̂` in volatility units.
pub fn calibrate_qrh(
    rv: &[f64],
    ret: &[f64],
    kernel: &KernelApprox,
    burn_in: usize,
) -> Result<QrhCalibration> {
    if rv.len() != ret.len() {
        return Err(Error::InvalidInput("rv and return series differ in length".into()));
    }
    if rv.len() <= burn_in + 100 {
        return Err(Error::InsufficientHistory(format!(
            "QRH calibration needs more than {} observations, got {}",
            burn_in + 100,
            rv.len()
        )));
    }
    let zs = z_path(ret, kernel);
    let z = &zs[burn_in..];
    let sigma = &rv[burn_in..];

    let mut ne = NormalEquations::new(3);
    for (&z, &s) in z.iter().zip(sigma) {
        ne.add_row(&[1.0, z, z * z], s * s);
    }
    let q = ne.solve().coeffs;
    let mean_var = sigma.iter().map(|s| s * s).sum::<f64>() / sigma.len() as f64;
    let floor = (1e-6 * mean_var).max(1e-300);
    let (seed, regression_seed) = if q[2] > 0.0 && q.iter().all(|v| v.is_finite()) {
        let a = q[2];
        let b = -q[1] / (2.0 * a);
        let c = (q[0] - a * b * b).max(floor);
        (QrhParams { a, b, c_qrh: c }, true)
    } else {
        (
            QrhParams {
                a: 1e-4,
                b: 0.0,
                c_qrh: mean_var.max(floor),
            },
            false,
        )
    };

    let z_scale = {
        let m = z.iter().sum::<f64>() / z.len() as f64;
        (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / z.len() as f64).sqrt()
    };
    let f = |x: &[f64]| objective(z, sigma, x[0].exp(), x[1], x[2].exp());
    let x0 = [seed.a.ln(), seed.b, seed.c_qrh.ln()];
    let start_value = f(&x0);
    let opts = NelderMeadOptions {
        max_evals: 3000,
        f_tol_rel: 1e-12,
        f_tol_abs: 1e-24,
        x_tol: 1e-9,
    };
    let m = nelder_mead(f, &x0, &[0.25, 0.25 * z_scale.max(1e-3), 0.25], &opts);
    let (x, value) = if m.value <= start_value {
        (m.x, m.value)
    } else {
        (x0.to_vec(), start_value)
    };
    if !m.converged {
        log::warn!("qrh_calibration converged=false evals={}", m.evals);
    }
    Ok(QrhCalibration {
        params: QrhParams {
            a: x[0].exp(),
            b: x[1],
            c_qrh: x[2].exp(),
        },
        objective: value,
        samples: z.len(),
        converged: m.converged,
        regression_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma_fn(x: f64) -> f64 {
        statrs::function::gamma::gamma(x)
    }

    #[test]
    fn weights_sum_to_one_and_rates_increase() {
        for h in [0.01, 0.055, 0.1, 0.3, 0.49] {
            let k = KernelConfig { hurst: h, ..Default::default() }.build().unwrap();
            assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.rates.windows(2).all(|w| w[1] > w[0]));
            k.validate().unwrap();
        }
    }

    #[test]
    fn degenerate_and_invalid_kernels() {
        assert!(matches!(build_kernel_approx(0.5, 20, (1e-3, 1e2)), Err(Error::KernelDegenerate(_))));
        assert!(build_kernel_approx(0.1, 20, (1e2, 1e-3)).is_err());
        assert!(build_kernel_approx(0.1, 0, (1e-3, 1e2)).is_err());
    }

    #[test]
    fn single_factor_is_an_exponential_moving_sum() {
        let k = build_kernel_approx(0.1, 1, (1.0, 10.0)).unwrap();
        assert_eq!(k.weights, vec![1.0]);
        let decay = (-k.rates[0]).exp();
        let rets = [0.3, -0.1, 0.7, 0.2];
        let mut s = QrhState::zeros(1);
        let mut ewma = 0.0;
        for r in rets {
            s = update_z(&s, r, &k);
            ewma = decay * ewma + r;
            assert!((s.z - ewma).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_matches_power_law_up_to_scale() {
        // Direct evaluation of K(t) = t^{H-1/2}/Γ(H+1/2); the approximation is
        // compared after matching the two at t = 10 days.
        let h = 0.1;
        let k = KernelConfig::default().build().unwrap();
        let exact = |t: f64| t.powf(h - 0.5) / gamma_fn(h + 0.5);
        let scale = exact(10.0) / k.evaluate(10.0);
        let mut worst = 0.0f64;
        for i in 0..=2490 {
            let t = 1.0 + i as f64 * 0.1;
            worst = worst.max((scale * k.evaluate(t) / exact(t) - 1.0).abs());
        }
        assert!(worst <= 0.05, "max relative error {worst}");
    }

    #[test]
    fn update_z_hand_arithmetic() {
        let k = KernelApprox::from_parts(0.1, vec![0.5, 0.5], vec![0.0, 2f64.ln()]).unwrap();
        let s = QrhState::from_factors(vec![1.0, 1.0], &k);
        let next = update_z(&s, 0.1, &k);
        assert!((next.factors[0] - 1.1).abs() < 1e-15);
        assert!((next.factors[1] - 0.6).abs() < 1e-15);
        assert!((next.z - 0.85).abs() < 1e-15);
    }

    #[test]
    fn update_z_accumulates_and_decays() {
        let k = KernelApprox::from_parts(0.1, vec![1.0], vec![0.0]).unwrap();
        let mut s = QrhState::zeros(1);
        for t in 1..=50 {
            s = update_z(&s, 1.0, &k);
            assert_eq!(s.z, t as f64);
        }
        let k = KernelConfig::default().build().unwrap();
        let init: Vec<f64> = (0..k.n_factors).map(|i| 1.0 + i as f64).collect();
        let mut s = QrhState::from_factors(init.clone(), &k);
        for _ in 0..37 {
            s = update_z(&s, 0.0, &k);
        }
        for (i, f) in s.factors.iter().enumerate() {
            let expect = (-k.rates[i] * 37.0).exp() * init[i];
            assert!((f - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
        let z: f64 = s.factors.iter().zip(&k.weights).map(|(f, w)| f * w).sum();
        assert!((s.z - z).abs() < 1e-12);
    }

    #[test]
    fn forecast_examples() {
        let p = QrhParams::UNIVERSAL;
        assert!((p.forecast_at(p.b) - 0.55f64.sqrt()).abs() < 1e-15);
        assert!((p.forecast_at(p.b) - 0.7416).abs() < 1e-4);
        let flat = QrhParams::new(0.0, 3.0, 0.8).unwrap();
        assert_eq!(flat.forecast_at(-17.0), 0.8f64.sqrt());
        let unit = QrhParams::new(1.0, 0.0, 1.0).unwrap();
        let s = QrhState { factors: vec![1.0], z: 1.0 };
        assert!((forecast_qrh(&unit, &s) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn blend_examples() {
        assert_eq!(forecast_blend(1.3, 0.4, BlendConfig::new(0.0).unwrap()), 1.3);
        assert_eq!(forecast_blend(1.3, 0.4, BlendConfig::new(1.0).unwrap()), 0.4);
        assert!((forecast_blend(1.0, 0.5, BlendConfig::new(0.1).unwrap()) - 0.95).abs() < 1e-15);
        assert!(BlendConfig::new(1.5).is_err());
    }

    #[test]
    fn noiseless_quadratic_is_interpolated() {
        let k = KernelConfig::default().build().unwrap();
        let truth = QrhParams::new(0.2, 0.3, 0.5).unwrap();
        let n = 1200;
        let ret: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.731).sin() * 0.8).collect();
        let z = z_path(&ret, &k);
        let rv: Vec<f64> = z.iter().map(|&z| truth.forecast_at(z)).collect();
        let cal = calibrate_qrh(&rv, &ret, &k, 250).unwrap();
        assert!(cal.objective <= 1e-8, "objective {}", cal.objective);
        assert!(objective(&z[250..], &rv[250..], truth.a, truth.b, truth.c_qrh) < 1e-25);
    }

    #[test]
    fn calibration_rejects_short_windows() {
        let k = KernelConfig::default().build().unwrap();
        assert!(matches!(
            calibrate_qrh(&[1.0; 300], &[0.0; 300], &k, 250),
            Err(Error::InsufficientHistory(_))
        ));
    }

    #[test]
    fn serde_round_trip_keeps_normalization() {
        let k = KernelConfig::default().build().unwrap();
        let text = serde_json::to_string(&k).unwrap();
        let back: KernelApprox = serde_json::from_str(&text).unwrap();
        assert_eq!(back, k);
        assert!((back.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
