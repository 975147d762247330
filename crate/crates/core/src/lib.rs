//! Parallelizing toolchain for hierarchical block-diagram models.
//!
//! A model (MDLX) is extracted into a flat IR (BLX), costed against a
//! hardware profile, allocated to cores, optionally split for data
//! parallelism, simulated, and emitted as parallel C.

pub mod benchmarks;
pub mod codegen;
pub mod extractor;
pub mod fnl;
pub mod hwprofile;
pub mod model;
pub mod scheduler;
pub mod simulator;
pub mod synth;
pub mod toolbox;
pub mod xml;

/// A point-cloud row.
pub type Point = [f64; 3];
pub type Controls = simulator::kernels::Controls<f64>;
pub type TrajectoryParams = simulator::kernels::TrajectoryParams<f64>;
pub type PidState = simulator::kernels::PidState<f64>;
