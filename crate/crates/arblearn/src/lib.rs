pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod mlp;
pub mod perturb;
pub mod storage;
pub mod train;
pub(crate) mod qp;

pub use error::{Error, Result};
