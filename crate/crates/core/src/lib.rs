//! Shape analysis and planning for dynamic neural-network graphs.

pub mod analysis;
pub mod demo;
pub mod fusion;
pub mod graph;
pub mod interp;
pub mod ops;
pub mod patch;
pub mod planner;
pub mod randgraph;
pub mod tensor;
