//! Experiment harness: configuration, scenario generation, episode sweeps
//! and result export for the next-best-view planners in `nbv-core`.

pub mod checks;
pub mod config;
pub mod experiments;
pub mod export;
pub mod scenarios;
