#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod linalg;
pub mod net;
pub mod report;

pub use error::{Error, Result};
pub mod config;
pub mod data;
pub mod experiments;
pub mod metrics;
pub mod oracles;
pub mod train;
