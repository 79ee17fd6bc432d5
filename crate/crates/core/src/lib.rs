//! Synthesis of grounded navigation instructions from a map knowledge graph.

pub mod generator;
pub mod geo;
pub mod grammar;
pub mod mapgraph;
pub mod metrics;
pub mod relations;
pub mod sampler;
pub mod stats;
pub mod synth;
