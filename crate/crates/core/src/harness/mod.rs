//! Experiment orchestration: toy datasets, configuration, persistence,
//! metric runners, and plot output.

pub mod config;
pub mod dataset;
pub mod persist;
pub mod plots;
pub mod run;
