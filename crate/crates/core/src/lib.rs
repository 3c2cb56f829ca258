pub mod cli;
pub mod dataflow;
pub mod dse;
pub mod error;
pub mod golden;
pub mod modelzoo;
pub mod perfmodel;
pub mod quant;

pub use error::{Error, Result};
