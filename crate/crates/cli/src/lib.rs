//! Experiment workbench: configuration, data preparation, per-profile
//! evaluation, reports and the subcommands of the `sspinv` binary.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod report;
pub mod svg;

pub use config::ExperimentConfig;

/// Seed streams derived from the master seed.
pub mod streams {
    pub const TRAIN_OCEAN: u64 = 1;
    pub const TEST_OCEAN: u64 = 2;
    /// Per test profile survey noise, indexed by profile.
    pub const SURVEYS: u64 = 3;
    pub const NET_TRAINING: u64 = 4;
}
