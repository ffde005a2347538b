//! Sliding-window out-of-sample evaluation.
//!
//! Every model is refit on the trailing window before each forecast (or
//! fit once when static), forecasts are compared to realized volatility,
//! and models are ranked by their MSE relative to a baseline on identical
//! dates.

mod backtest;
mod model;
mod report;
mod studies;

pub use backtest::{audit_lookahead, backtest, forecast_next, AssetIssue, AuditMismatch, AuditReport, BacktestOutput};
pub use model::{Forecaster, Model, ModelSpec, Predictor, FITTED_HURST_BOUNDS};
pub use report::{
    compare_series, mse, mse_excluding, quantile_sorted, relative_report, report_from_outputs, AssetRatio,
    EvalReport, ModelReport, ReportMeta, Summary,
};
pub use studies::{
    blend_series, dynamic_eval, group_comparison, lambda_sweep, seq_len_study, DynamicReport, GroupCell,
    GroupComparison, LambdaPoint, LambdaSweep, RetrainSchedule, RetrainSegment, SeqLenPoint, YearRatio,
};
