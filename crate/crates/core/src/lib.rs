#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytic;
pub mod backbone;
pub mod bp_trainer;
pub mod config;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod prompts;
pub mod report;
pub mod sweep;
pub mod verify;

pub use config::RunConfig;
pub use error::{PalError, Result};
