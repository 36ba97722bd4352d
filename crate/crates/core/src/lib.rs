//! Incremental loop-closure verification by guided sampling, with a seeded
//! synthetic world to drive it.

pub mod config;
pub mod consistency;
pub mod evaluation;
pub mod g2o;
pub mod hypothesis;
pub mod ledger;
pub mod pose_graph;
pub mod rng;
pub mod runner;
pub mod sampler;
pub mod se2;
pub mod sparse;
pub mod world;
