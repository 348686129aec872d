//! Recurrence mining, dataset emission, evaluation and labeling on top of `forge-core`.

pub mod cli;
pub mod emit;
pub mod error;
pub mod evalio;
pub mod fixture;
pub mod fsutil;
pub mod graphio;
pub mod images;
pub mod pipeline;
pub mod service;
pub mod store;

pub use error::{ForgeError, Result};
