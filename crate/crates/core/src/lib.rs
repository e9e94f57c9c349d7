//! Distribution-system power flow solved two ways: a fixed-point numerical
//! oracle and a hierarchical tree of per-cluster neural networks, plus the
//! tooling to partition feeders, synthesize training data and benchmark the
//! surrogate against the oracle.

pub mod bench;
pub mod cascade;
pub mod feeder;
pub mod fixtures;
pub mod partition;
pub mod pipeline;
pub mod neural;
pub mod solver;
pub mod synth;
pub mod textfmt;
