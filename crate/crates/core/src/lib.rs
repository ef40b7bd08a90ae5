pub mod metrics;
pub mod world;
pub mod elicitation;
pub mod backend;
pub mod execution;
pub mod harness;
