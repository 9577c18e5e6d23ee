//! Grid-forming converter with a battery-fed DC link: dynamic model,
//! equilibria, simulation, small-signal analysis and DC gain tuning.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ac;
pub mod config;
pub mod dc;
pub mod error;
pub mod numdiff;
pub mod sim;
pub mod smallsignal;
pub mod tuner;

pub use config::{BatteryOrder, DcGains, LoadParams, SystemParams};
pub use error::{Error, Result};
