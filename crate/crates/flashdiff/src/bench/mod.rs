//! Workload generation, the experiment runner, the TPC-C-like transaction
//! mix, and report emission.

pub mod config;
pub mod experiment;
pub mod harness;
pub mod report;
pub mod tpcc;
pub mod workload;
