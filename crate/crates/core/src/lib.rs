//! Deterministic reactor scheduling core.
//!
//! This crate holds the parts of the runtime that do not need an operating
//! system: superdense [`Tag`] arithmetic, the reactor graph and its acyclic
//! precedence graph, the tag-ordered [`Scheduler`], trace digests, the wire
//! codec used by the middleware, the safe-to-process arithmetic used by
//! transactors, and the pure stage logic of the demo applications.
//!
//! Threads, clocks, transports and the command line live in the `tagsoa`
//! crate. With the default `std` feature enabled, panics inside reactions are
//! caught and reported as [`RuntimeError::ExecutionFault`].

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod apg;
pub mod codec;
pub mod counter;
pub mod graph;
pub mod pipeline;
pub mod safe;
pub mod scheduler;
pub mod time;
pub mod trace;

pub use apg::{build_apg, Apg};
pub use codec::{CodecError, MessageKind, WireMessage};
pub use graph::{
    ActionId, ActionKind, GraphBuilder, GraphError, Payload, PortId, PortKind, ReactionId,
    ReactorGraph, ReactorId, ReactorKey, Topology, Trigger,
};
pub use safe::{
    check_causality, safe_tag, Admission, TransactorConfig, TransactorError, UntaggedPolicy,
};
pub use scheduler::{
    Event, EventTarget, Executor, Inline, Job, PhysicalTagAllocator, PhysicalTime, ReactionCtx,
    RuntimeError, Scheduler, StaleTag, StepReport, StopCondition,
};
pub use time::{check_deadline, Duration, Tag};
pub use trace::{trace_digest, TraceDigest, TraceRecord};
