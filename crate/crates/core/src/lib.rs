//! Workbench comparing monolithic, transfer, meta- and contrastive learning for
//! encrypted traffic classification over per-packet time series.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod bench;
pub mod dataio;
pub mod episodes;
pub mod error;
pub mod forest;
pub mod nets;
pub mod numerics;
pub mod rng;
pub mod trainers;

pub use error::{Error, Result};
