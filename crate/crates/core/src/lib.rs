//! Federated scheduling analysis for real-time tasks that alternate between
//! CPU segments, host/device memory copies and GPU kernels.

pub mod analysis;
pub mod gpu;
pub mod model;
pub mod simulator;
pub mod suspension;
pub mod time;
pub mod workbench;

#[cfg(test)]
mod testutil;

pub use model::{AnalysisReport, MemModel, Method, SmAllocation, TaskSet, TaskSpec};
pub use time::{Duration, Micros, Rational};
