//! Device-mapping planner and virtual-time simulator for RLHF dataflows.

pub mod cli;
pub mod cost;
pub mod dataflow;
pub mod mapper;
pub mod runtime;
pub mod topology;
pub mod units;
