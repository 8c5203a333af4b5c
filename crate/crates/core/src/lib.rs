pub mod automaton;
pub mod checker;
pub mod detection;
pub mod embedding;
pub mod latency;
pub mod pipeline;
pub mod remote;
pub mod sampling;
pub mod tlspec;
