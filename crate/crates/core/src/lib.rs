//! Numerical core for municipal house price indices, alternative-data factor
//! panels, long-short factor backtests and a windowed transformer forecaster.
//!
//! The crate only needs `alloc`; file formats and the command line live in
//! the `munidex` companion crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod area;
pub mod backtest;
pub mod econometrics;
pub mod error;
pub mod factors;
pub mod forecaster;
pub mod panel;
pub mod signals;
pub mod spatial;
pub mod stats;
pub mod synth;
pub mod transactions;

pub use area::{AreaCode, Year};
pub use error::{Error, Result};
pub use panel::{Derived, Diagnostics, Panel, PanelKind, PanelObservation};
