//! Energy-aware search for loop offload patterns.
//!
//! A program's loops ([`loop_model`]) define a bit-vector search space
//! ([`pattern`]). Patterns are measured for time and Watt-seconds
//! ([`measurement`]) and ranked by [`score`]. GPU and many-core targets are
//! searched with a genetic algorithm ([`ga`]), FPGA targets with a candidate
//! filter and two measurement rounds ([`fpga`]), and [`destination`] picks
//! between devices.

pub mod cli;
pub mod config;
pub mod destination;
pub mod fpga;
pub mod ga;
pub mod loop_model;
pub mod measurement;
pub mod pattern;
pub mod score;
pub mod transfer_opt;

pub use loop_model::{LoopProgram, LoopStatement};
pub use measurement::{Evaluator, MeasurementResult};
pub use pattern::{Device, Gene, OffloadPattern};
