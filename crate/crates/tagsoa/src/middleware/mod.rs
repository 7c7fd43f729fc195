//! A simulated service-oriented middleware.
//!
//! Services are described by a [`ServiceDescriptor`] and offered through a
//! [`Skeleton`] on some [`Endpoint`]; clients reach them through a
//! [`Proxy`]. Endpoints never talk to each other directly. Everything they
//! send goes to an outbox, and whoever drives the simulation moves outgoing
//! messages across a [`Network`] and hands them to the receiving endpoint
//! at their arrival time.
//!
//! An endpoint's binding can be tagged or legacy. A tagged binding copies
//! the tag stored in the [`TimestampBypass`] into the trailer of outgoing
//! messages and stores the trailer of incoming messages there; a legacy
//! binding ignores tags altogether.

mod binding;
mod bypass;
mod registry;
mod service;
mod transport;

pub use binding::{
    BindingMode, Endpoint, Incoming, Outgoing, Proxy, Request, Responder, ResponseFuture, Skeleton,
};
pub use bypass::{BypassKey, TimestampBypass};
pub use registry::Registry;
pub use service::{FieldDescriptor, FieldIds, ServiceDescriptor};
pub use transport::{Delivery, LatencyDistribution, Link, LinkModel, Network, ParseLatencyError};

use tagsoa_core::CodecError;

/// Identifies an endpoint on the simulated network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EndpointId(pub u32);

impl std::fmt::Display for EndpointId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ep{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MiddlewareError {
    #[error("service {0:#06x} not found")]
    ServiceNotFound(u16),
    #[error(transparent)]
    MalformedMessage(#[from] CodecError),
    #[error("no tag in the bypass for call {call_id} on {endpoint}")]
    BypassEmpty { endpoint: EndpointId, call_id: u32 },
    #[error("bypass for call {call_id} on {endpoint} already holds a tag")]
    BypassOccupied { endpoint: EndpointId, call_id: u32 },
    #[error("invalid service descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("service {service_id:#06x} has no handler for id {id}")]
    NoHandler { service_id: u16, id: u16 },
}
