use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{self, LinearCoeffs};
use crate::lstm::LstmEnsemble;
use crate::panel::DailyRecord;
use crate::qrh::{calibrate_qrh, forecast_blend, BlendConfig, KernelApprox, KernelConfig, QrhParams, QrhState};
use crate::rfsv::{self, HurstConfig, RfsvForecastConfig, RfsvParams, RfsvPredictor};

/// Anything the harness can evaluate: fitted on a trailing window of daily
/// records, then asked for the next day's volatility given recent history.
pub trait Forecaster: Send + Sync {
    /// Stable identifier that spells out every parameter.
    fn id(&self) -> String;

    /// Records `predict` needs before the target date.
    fn context_len(&self) -> usize;

    /// True when fitting ignores the window, so one fit serves a whole backtest.
    fn is_static(&self) -> bool {
        false
    }

    fn fit(&self, window: &[DailyRecord]) -> Result<Box<dyn Predictor>>;
}

pub trait Predictor: Send + Sync {
    /// Forecast for the day after the last record of `context`.
    fn predict(&self, context: &[DailyRecord]) -> Result<f64>;
}

/// Hurst estimates outside `(0, 1/2)` are pulled back inside before the
/// forecast weights are built.
pub const FITTED_HURST_BOUNDS: (f64, f64) = (0.001, 0.499);

/// Built-in forecasters.
#[derive(Debug, Clone)]
pub enum Model {
    Ar { p: usize },
    Har,
    /// Hurst parameter and correction re-estimated on every window.
    RfsvFit { hurst: HurstConfig, forecast: RfsvForecastConfig },
    RfsvFixed { params: RfsvParams, forecast: RfsvForecastConfig },
    /// `(a, b, c)` calibrated on every window.
    QrhFit { kernel: KernelConfig, burn_in: usize },
    QrhFixed { kernel: KernelConfig, params: QrhParams },
    /// `(1 - λ) · rfsv + λ · qrh`.
    Blend { lambda: f64, rfsv: Box<Model>, qrh: Box<Model> },
    /// Frozen ensemble predicting the whole period.
    Lstm { name: String, ensemble: Arc<LstmEnsemble> },
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Ar { p } if *p == 0 => Err(Error::InvalidParameter("AR order must be positive".into())),
            Model::RfsvFit { forecast, .. } => forecast.validate(),
            Model::RfsvFixed { params, forecast } => RfsvPredictor::new(*params, forecast).map(|_| ()),
            Model::QrhFit { kernel, .. } => kernel.build().map(|_| ()),
            Model::QrhFixed { kernel, params } => {
                params.validate()?;
                kernel.build().map(|_| ())
            }
            Model::Blend { lambda, rfsv, qrh } => {
                BlendConfig::new(*lambda)?;
                rfsv.validate()?;
                qrh.validate()
            }
            Model::Lstm { ensemble, .. } => ensemble.validate(),
            _ => Ok(()),
        }
    }
}

fn kernel_id(k: &KernelConfig) -> String {
    format!("H={},n={},rates={}..{}", k.hurst, k.n_factors, k.rate_bounds.0, k.rate_bounds.1)
}

fn forecast_id(f: &RfsvForecastConfig) -> String {
    format!("T={},renorm={}", f.truncation_len, f.renormalize_weights)
}

fn rv_of(records: &[DailyRecord]) -> Vec<f64> {
    records.iter().map(|r| r.rv).collect()
}

struct LinearPredictor(LinearCoeffs);

impl Predictor for LinearPredictor {
    fn predict(&self, context: &[DailyRecord]) -> Result<f64> {
        let lag = self.0.model_kind.max_lag();
        let n = context.len();
        if n < lag {
            return Err(Error::InsufficientHistory(format!("need {lag} records, got {n}")));
        }
        linear::forecast_linear(&self.0, &rv_of(&context[n - lag..]))
    }
}

struct RfsvContextPredictor(RfsvPredictor);

impl Predictor for RfsvContextPredictor {
    fn predict(&self, context: &[DailyRecord]) -> Result<f64> {
        let t = self.0.truncation_len();
        let n = context.len();
        if n < t {
            return Err(Error::InsufficientHistory(format!("need {t} records, got {n}")));
        }
        self.0.predict(&rfsv::log_rv(&rv_of(&context[n - t..]))?)
    }
}

/// Runs the factor recursion over the last `span` returns from zero state.
struct QrhPredictor {
    params: QrhParams,
    kernel: KernelApprox,
    span: usize,
}

impl Predictor for QrhPredictor {
    fn predict(&self, context: &[DailyRecord]) -> Result<f64> {
        let n = context.len();
        if n < self.span {
            return Err(Error::InsufficientHistory(format!("need {} records, got {n}", self.span)));
        }
        let decays = self.kernel.decays();
        let mut state = QrhState::zeros(self.kernel.n_factors);
        for r in &context[n - self.span..] {
            state.step(r.ret, &decays, &self.kernel.weights);
        }
        Ok(self.params.forecast_at(state.z))
    }
}

struct BlendPredictor {
    blend: BlendConfig,
    rfsv: Box<dyn Predictor>,
    qrh: Box<dyn Predictor>,
}

impl Predictor for BlendPredictor {
    fn predict(&self, context: &[DailyRecord]) -> Result<f64> {
        Ok(forecast_blend(self.rfsv.predict(context)?, self.qrh.predict(context)?, self.blend))
    }
}

struct LstmPredictor(Arc<LstmEnsemble>);

impl Predictor for LstmPredictor {
    fn predict(&self, context: &[DailyRecord]) -> Result<f64> {
        self.0.predict(context)
    }
}

impl Forecaster for Model {
    fn id(&self) -> String {
        match self {
            Model::Ar { p } => format!("ar{p}"),
            Model::Har => "har".into(),
            Model::RfsvFit { hurst, forecast } => format!(
                "rfsv_fit(q={:?},lags={}..{},{})",
                hurst.q_set,
                hurst.lags.iter().min().unwrap_or(&0),
                hurst.lags.iter().max().unwrap_or(&0),
                forecast_id(forecast)
            ),
            Model::RfsvFixed { params, forecast } => {
                format!("rfsv_fixed(H={},c={},{})", params.hurst, params.c_rfsv, forecast_id(forecast))
            }
            Model::QrhFit { kernel, burn_in } => format!("qrh_fit({},burn_in={burn_in})", kernel_id(kernel)),
            Model::QrhFixed { kernel, params } => format!(
                "qrh_fixed({},a={},b={},c={})",
                kernel_id(kernel),
                params.a,
                params.b,
                params.c_qrh
            ),
            Model::Blend { lambda, rfsv, qrh } => format!("blend(lambda={lambda},{},{})", rfsv.id(), qrh.id()),
            Model::Lstm { name, .. } => format!("lstm({name})"),
        }
    }

    fn context_len(&self) -> usize {
        match self {
            Model::Ar { p } => *p,
            Model::Har => linear::HAR_MAX_LAG,
            Model::RfsvFit { forecast, .. } | Model::RfsvFixed { forecast, .. } => forecast.truncation_len,
            // The factor recursion runs over the whole window.
            Model::QrhFit { .. } | Model::QrhFixed { .. } => 0,
            Model::Blend { rfsv, qrh, .. } => rfsv.context_len().max(qrh.context_len()),
            Model::Lstm { ensemble, .. } => ensemble.config.seq_len,
        }
    }

    fn is_static(&self) -> bool {
        match self {
            Model::RfsvFixed { .. } | Model::QrhFixed { .. } | Model::Lstm { .. } => true,
            Model::Blend { rfsv, qrh, .. } => rfsv.is_static() && qrh.is_static(),
            _ => false,
        }
    }

    fn fit(&self, window: &[DailyRecord]) -> Result<Box<dyn Predictor>> {
        Ok(match self {
            Model::Ar { p } => Box::new(LinearPredictor(linear::fit_ar(&rv_of(window), *p)?)),
            Model::Har => Box::new(LinearPredictor(linear::fit_har(&rv_of(window))?)),
            Model::RfsvFit { hurst, forecast } => {
                let logs = rfsv::log_rv(&rv_of(window))?;
                let fit = rfsv::estimate_hurst_with(&logs, hurst)?;
                let h = fit.hurst.clamp(FITTED_HURST_BOUNDS.0, FITTED_HURST_BOUNDS.1);
                let params = RfsvParams {
                    hurst: h,
                    c_rfsv: rfsv::rfsv_correction(h, fit.nu),
                };
                Box::new(RfsvContextPredictor(RfsvPredictor::new(params, forecast)?))
            }
            Model::RfsvFixed { params, forecast } => Box::new(RfsvContextPredictor(RfsvPredictor::new(*params, forecast)?)),
            Model::QrhFit { kernel, burn_in } => {
                let kernel = kernel.build()?;
                let ret: Vec<f64> = window.iter().map(|r| r.ret).collect();
                let cal = calibrate_qrh(&rv_of(window), &ret, &kernel, *burn_in)?;
                Box::new(QrhPredictor {
                    params: cal.params,
                    kernel,
                    span: window.len(),
                })
            }
            Model::QrhFixed { kernel, params } => Box::new(QrhPredictor {
                params: *params,
                kernel: kernel.build()?,
                span: window.len(),
            }),
            Model::Blend { lambda, rfsv, qrh } => Box::new(BlendPredictor {
                blend: BlendConfig::new(*lambda)?,
                rfsv: rfsv.fit(window)?,
                qrh: qrh.fit(window)?,
            }),
            Model::Lstm { ensemble, .. } => Box::new(LstmPredictor(Arc::clone(ensemble))),
        })
    }
}

/// Serializable description of a built-in model. LSTM entries name a
/// checkpoint that the caller loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ar {
        p: usize,
    },
    Har {},
    RfsvFit {
        #[serde(default)]
        hurst: HurstConfig,
        #[serde(default)]
        forecast: RfsvForecastConfig,
    },
    RfsvFixed {
        #[serde(default = "universal_rfsv")]
        params: RfsvParams,
        #[serde(default)]
        forecast: RfsvForecastConfig,
    },
    QrhFit {
        #[serde(default)]
        kernel: KernelConfig,
        #[serde(default = "default_burn_in")]
        burn_in: usize,
    },
    QrhFixed {
        #[serde(default)]
        kernel: KernelConfig,
        #[serde(default = "universal_qrh")]
        params: QrhParams,
    },
    Blend {
        lambda: f64,
        rfsv: Box<ModelSpec>,
        qrh: Box<ModelSpec>,
    },
    Lstm {
        checkpoint: std::path::PathBuf,
    },
}

fn universal_rfsv() -> RfsvParams {
    RfsvParams::UNIVERSAL
}

fn universal_qrh() -> QrhParams {
    QrhParams::UNIVERSAL
}

fn default_burn_in() -> usize {
    crate::qrh::DEFAULT_CALIBRATION_BURN_IN
}

impl ModelSpec {
    /// Builds the model; `load` resolves LSTM checkpoints.
    pub fn build(&self, load: &mut dyn FnMut(&std::path::Path) -> Result<LstmEnsemble>) -> Result<Model> {
        let m = match self {
            ModelSpec::Ar { p } => Model::Ar { p: *p },
            ModelSpec::Har {} => Model::Har,
            ModelSpec::RfsvFit { hurst, forecast } => Model::RfsvFit {
                hurst: hurst.clone(),
                forecast: *forecast,
            },
            ModelSpec::RfsvFixed { params, forecast } => Model::RfsvFixed {
                params: *params,
                forecast: *forecast,
            },
            ModelSpec::QrhFit { kernel, burn_in } => Model::QrhFit {
                kernel: *kernel,
                burn_in: *burn_in,
            },
            ModelSpec::QrhFixed { kernel, params } => Model::QrhFixed {
                kernel: *kernel,
                params: *params,
            },
            ModelSpec::Blend { lambda, rfsv, qrh } => Model::Blend {
                lambda: *lambda,
                rfsv: Box::new(rfsv.build(load)?),
                qrh: Box::new(qrh.build(load)?),
            },
            ModelSpec::Lstm { checkpoint } => Model::Lstm {
                name: checkpoint
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "lstm".into()),
                ensemble: Arc::new(load(checkpoint)?),
            },
        };
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(rv: &[f64]) -> Vec<DailyRecord> {
        let dates = crate::simulate::business_days(crate::simulate::default_start_date(), rv.len());
        rv.iter()
            .zip(dates)
            .enumerate()
            .map(|(i, (&rv, date))| DailyRecord {
                date,
                rv,
                ret: 0.1 * ((i % 7) as f64 - 3.0),
            })
            .collect()
    }

    #[test]
    fn ids_are_distinct_and_spell_out_parameters() {
        let fixed = Model::RfsvFixed {
            params: RfsvParams::UNIVERSAL,
            forecast: RfsvForecastConfig::default(),
        };
        assert_eq!(fixed.id(), "rfsv_fixed(H=0.055,c=1.03,T=500,renorm=true)");
        let q = Model::QrhFixed {
            kernel: KernelConfig::default(),
            params: QrhParams::UNIVERSAL,
        };
        let b = Model::Blend {
            lambda: 0.1,
            rfsv: Box::new(fixed.clone()),
            qrh: Box::new(q.clone()),
        };
        assert!(b.id().starts_with("blend(lambda=0.1,rfsv_fixed"));
        assert!(b.is_static());
        assert!(!Model::Har.is_static());
        assert_eq!(b.context_len(), 500);
    }

    #[test]
    fn constant_history_models_forecast_the_constant() {
        let r = recs(&vec![0.9; 600]);
        for m in [
            Model::Har,
            Model::Ar { p: 3 },
            Model::RfsvFixed {
                params: RfsvParams { hurst: 0.1, c_rfsv: 1.0 },
                forecast: RfsvForecastConfig::default(),
            },
        ] {
            let p = m.fit(&r).unwrap();
            assert!((p.predict(&r).unwrap() - 0.9).abs() < 1e-6, "{}", m.id());
        }
    }

    #[test]
    fn qrh_fixed_uses_the_window_returns() {
        let r = recs(&vec![1.0; 300]);
        let kernel = KernelConfig::default();
        let params = QrhParams::new(0.0, 0.0, 0.49).unwrap();
        let m = Model::QrhFixed { kernel, params };
        let p = m.fit(&r).unwrap();
        assert!((p.predict(&r).unwrap() - 0.7).abs() < 1e-12);
        assert!(p.predict(&r[..10]).is_err());
    }

    #[test]
    fn spec_round_trip_and_build() {
        let text = r#"[{"model":"har"},{"model":"ar","p":5},{"model":"blend","lambda":0.1,
            "rfsv":{"model":"rfsv_fixed"},"qrh":{"model":"qrh_fixed"}}]"#;
        let specs: Vec<ModelSpec> = serde_json::from_str(text).unwrap();
        let mut no_load = |_: &std::path::Path| -> Result<LstmEnsemble> { Err(Error::NoData) };
        let models: Vec<Model> = specs.iter().map(|s| s.build(&mut no_load).unwrap()).collect();
        assert_eq!(models[1].id(), "ar5");
        assert!(models[2].id().contains("a=0.043,b=0.74,c=0.55"));
        assert!(serde_json::from_str::<ModelSpec>(r#"{"model":"har","extra":1}"#).is_err());
        let bad: ModelSpec = serde_json::from_str(r#"{"model":"ar","p":0}"#).unwrap();
        assert!(bad.build(&mut no_load).is_err());
    }
}
