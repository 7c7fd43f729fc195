//! Reactor runtime with clocks and thread pools, a simulated
//! service-oriented middleware, the transactors that join the two, and the
//! counter and brake-assistant demos.

pub mod apps;
pub mod cli;
pub mod federation;
pub mod middleware;
pub mod runtime;
pub mod transactors;

pub use tagsoa_core::*;
