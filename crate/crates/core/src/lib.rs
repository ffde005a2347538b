//! Next-day realized-volatility forecasting.
//!
//! The crate covers the full pipeline: building daily panels from intraday
//! prices ([`panel`]), synthetic rough-volatility generators ([`simulate`]),
//! the forecasters themselves ([`linear`], [`rfsv`], [`qrh`], [`lstm`]) and a
//! sliding-window evaluation harness ([`eval`]).

pub mod error;
pub mod eval;
pub mod linalg;
pub mod linear;
pub mod lstm;
pub mod optim;
pub mod panel;
pub mod qrh;
pub mod rfsv;
pub mod series;
pub mod simulate;

pub use error::{Error, Result};
