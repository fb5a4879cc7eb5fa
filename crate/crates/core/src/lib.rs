//! Latent factor extraction with conditional autoencoders, uncertainty-aware
//! factor selection, tangency portfolio construction and an expanding-window
//! backtest engine.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptive;
pub mod backtest;
pub mod cae;
pub mod config;
pub mod error;
pub mod forecasters;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod panel;
pub mod report;
pub mod rng;
pub mod selection;
pub mod synthdata;

pub use error::{Error, Result};
