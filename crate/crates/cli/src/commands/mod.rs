//! Subcommand implementations; each returns the process exit code.

pub mod analyze;
pub mod embed;
pub mod evaluate;
pub mod intrinsic_mean;
pub mod phantom;
pub mod visualize;
