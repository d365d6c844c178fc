//! Task-aware adversarial attacks against vision-action manipulation policies
//! in a small deterministic tabletop world.

pub mod error;
pub mod safety;
pub mod scene;
pub mod types;

pub use error::{Error, Result};
pub mod attack;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod policy;
