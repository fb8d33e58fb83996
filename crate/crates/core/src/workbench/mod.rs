//! Experiment tooling: taskset generation, acceptance sweeps and the
//! throughput metric.

pub mod generator;
pub mod sweep;
pub mod throughput;

pub use generator::{generate_taskset, GenerateError, Generated, GeneratorParams, Range};
pub use sweep::{acceptance_sweep, cell_rng, write_csv, Dimension, SweepConfig, SweepError, SweepRow};
pub use throughput::{throughput_improvement, ThroughputError, ThroughputScope};
